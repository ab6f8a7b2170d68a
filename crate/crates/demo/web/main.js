import init, { sensitivitySweep, weightingBalance, runSimulation } from "./pkg/tatesens_demo.js";

const fmt = (x, d = 3) => (x === null || x === undefined ? "NA" : Number(x).toFixed(d));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const tr = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><thead><tr>${th}</tr></thead><tbody>${tr}</tbody></table>`;
}

function bind(id, request, render, call) {
  const form = document.getElementById(id);
  const out = document.getElementById(`${id}-out`);
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const f = Object.fromEntries(new FormData(form));
    try {
      out.innerHTML = render(JSON.parse(call(JSON.stringify(request(f)))));
    } catch (e) {
      out.innerHTML = `<p class="error">${e}</p>`;
    }
  });
}

const num = Number;

await init();

bind(
  "sweep",
  (f) => ({
    treatment: { estimate: num(f.a), se: num(f.a_se) },
    z_interaction: { estimate: num(f.az), se: num(f.az_se) },
    v_interaction: { estimate: num(f.av), se: num(f.av_se) },
    z_mean: num(f.z),
    z_lo: f.z_lo === "" ? null : num(f.z_lo),
    z_hi: f.z_hi === "" ? null : num(f.z_hi),
    v_range: [num(f.v_lo), num(f.v_hi)],
    grid_points: 9,
  }),
  (r) =>
    r.svg +
    table(
      ["E[V]", "effect", "lower", "upper"],
      r.rows.map((x) => [fmt(x.ev), fmt(x.estimate), fmt(x.lower), fmt(x.upper)]),
    ),
  sensitivitySweep,
);

bind(
  "weighting",
  (f) => ({
    n_trial: num(f.n_trial),
    n_pop: num(f.n_pop),
    gamma_x: num(f.gamma_x),
    gamma_z: num(f.gamma_z),
    seed: num(f.seed),
  }),
  (r) =>
    r.tables
      .map(
        (t) =>
          `<h3>${t.label} (ESS ${fmt(t.ess, 1)})</h3>` +
          table(
            ["item", "trial mean", "population mean", "std diff arms", "std diff population"],
            t.rows.map((x) => [x.item, fmt(x.trial), fmt(x.population), fmt(x.std_diff_arms), fmt(x.std_diff_population)]),
          ),
      )
      .join("") + r.warnings.map((w) => `<p class="error">${w}</p>`).join(""),
  weightingBalance,
);

bind(
  "simulation",
  (f) => ({
    preset: f.preset,
    replicates: num(f.replicates),
    n_trial: num(f.n_trial),
    n_pop: num(f.n_pop),
    seed: num(f.seed),
  }),
  (r) =>
    `<p>true effect ${fmt(r.true_tate)}, ${r.replicates} replicates, ${r.failed} failed</p>` +
    table(
      ["method", "bias", "MCSE", "SD", "mean SE", "coverage"],
      r.methods.map((m) => [m.method, fmt(m.bias, 4), fmt(m.mcse_bias, 4), fmt(m.sd, 4), fmt(m.mean_se, 4), fmt(m.coverage)]),
    ),
  runSimulation,
);
