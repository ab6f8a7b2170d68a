use std::io::Write;

use proptest::prelude::*;

use tatesens::data::{
    check_modifier_coverage, declare_roles, load_table, Column, DataTable, OutcomeRole, PopulationKind,
    PopulationTarget, Schema, SummaryStats, VariableRoles,
};
use tatesens::{Error, ErrorClass};

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn csv_file_drops_incomplete_rows_only_in_schema_columns() {
    let mut text = String::from("id,arm,cd4,note,group\n");
    for i in 0..10 {
        let cd4 = if i == 6 {
            "NA".to_string()
        } else {
            format!("{}", 300 + i)
        };
        // `note` is outside the schema, so its gaps do not matter.
        let note = if i % 3 == 0 { "" } else { "x" };
        text.push_str(&format!("{i},{},{cd4},{note},{}\n", i % 2, ["a", "b"][i % 2]));
    }
    let f = write_temp(&text);
    let schema = Schema::new()
        .numeric("id")
        .binary("arm")
        .numeric("cd4")
        .categorical("group", Some(&["b", "a"]));
    let t = load_table(f.path(), &schema).unwrap();
    assert_eq!(t.n_rows(), 9);
    assert_eq!(t.dropped_rows, 1);
    assert!(!t.has_column("note"));
    assert_eq!(t.column("group").unwrap().levels().unwrap(), ["b", "a"]);
}

#[test]
fn header_only_file_has_no_rows() {
    let f = write_temp("y,a\n");
    let err = load_table(f.path(), &Schema::new().numeric("y")).unwrap_err();
    assert!(matches!(err, Error::NoRows(_)), "{err}");
    assert_eq!(err.class(), ErrorClass::Data);
}

#[test]
fn unreadable_file_is_an_io_error() {
    let err = load_table("/nonexistent/trial.csv", &Schema::new().numeric("y")).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Io);
}

#[test]
fn type_errors_name_the_column() {
    let f = write_temp("y,a\n1.5,0\n2.5,2\n");
    let err = load_table(f.path(), &Schema::new().numeric("y").binary("a")).unwrap_err();
    assert!(err.to_string().contains('a'), "{err}");
    let f = write_temp("y,a\n1.5,0\nabc,1\n");
    let err = load_table(f.path(), &Schema::new().numeric("y").binary("a")).unwrap_err();
    assert!(
        matches!(err, Error::BadValue { ref column, .. } if column == "y"),
        "{err}"
    );
}

#[test]
fn summary_file_round_trip() {
    let f = write_temp(
        r#"
z_means.nonwhite = [0.639, 0.62, 0.66]
z_means.female = [0.266]
z_ranges.age = [13, 80]

[joint_cells]
columns = ["sex", "race"]
[[joint_cells.cell]]
levels = ["female", "White"]
p = 0.1
[[joint_cells.cell]]
levels = ["female", "nonWhite"]
p = 0.166
[[joint_cells.cell]]
levels = ["male", "White"]
p = 0.261
[[joint_cells.cell]]
levels = ["male", "nonWhite"]
p = 0.473
"#,
    );
    let s = SummaryStats::load(f.path()).unwrap();
    let nw = s.z_means["nonwhite"];
    assert_eq!((nw.point, nw.lo, nw.hi), (0.639, Some(0.62), Some(0.66)));
    assert!(!s.z_means["female"].has_ci());
    assert_eq!(s.z_ranges["age"], (13.0, 80.0));
    assert_eq!(s.joint_cells.unwrap().cells.len(), 4);
}

#[test]
fn summary_file_rejects_bad_content() {
    for text in [
        "z_means.a = [0.5, 0.6, 0.7]",
        "z_means.a = [0.5, 0.4]",
        "unknown = 1",
        "[joint_cells]\ncolumns = [\"g\"]\n[[joint_cells.cell]]\nlevels = [\"a\"]\np = 0.7",
    ] {
        assert!(SummaryStats::parse(text).is_err(), "accepted {text:?}");
    }
}

#[test]
fn summary_ranges_drive_numeric_coverage() {
    let trial = DataTable::new(vec![Column::numeric("age", (16..=75).map(f64::from).collect())]).unwrap();
    let pop = PopulationTarget::summary(SummaryStats::parse("z_ranges.age = [13, 80]").unwrap());
    let rep = check_modifier_coverage(&trial, &pop, &["age".into()]).unwrap();
    assert_eq!(rep.flags().len(), 2);
    assert!(rep.trimmed.is_none());
    let pop = PopulationTarget::summary(SummaryStats::parse("z_means.x = [1]").unwrap());
    assert!(check_modifier_coverage(&trial, &pop, &["age".into()]).is_err());
}

const COLS: [&str; 6] = ["c0", "c1", "c2", "c3", "c4", "c5"];

fn role_table() -> DataTable {
    let mut cols: Vec<Column> = COLS
        .iter()
        .map(|c| Column::numeric(c, vec![1.0, 2.0, 3.0, 4.0]))
        .collect();
    cols.push(Column::binary("A", vec![0.0, 1.0, 0.0, 1.0]));
    cols.push(Column::numeric("dose", vec![0.0, 1.0, 2.0, 1.0]));
    DataTable::new(cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Each column gets a role code: 0 unused, 1 outcome, 2 X, 3 Z, 4 V, and
    /// possibly a second role.
    #[test]
    fn roles_are_accepted_exactly_when_disjoint(
        first in prop::collection::vec(0usize..5, 6),
        second in prop::collection::vec(0usize..5, 6),
        binary_treatment in any::<bool>(),
    ) {
        let mut roles = VariableRoles {
            treatment: if binary_treatment { "A".into() } else { "dose".into() },
            ..VariableRoles::default()
        };
        let mut outcome = Vec::new();
        let mut overlap = false;
        for (k, c) in COLS.iter().enumerate() {
            let codes = if second[k] != 0 && second[k] != first[k] { vec![first[k], second[k]] } else { vec![first[k]] };
            overlap |= codes.iter().filter(|&&r| r != 0).count() > 1;
            for code in codes {
                match code {
                    1 => outcome.push(c.to_string()),
                    2 => roles.x_covars.push(c.to_string()),
                    3 => roles.z_modifiers.push(c.to_string()),
                    4 => roles.v_modifiers.push(c.to_string()),
                    _ => {}
                }
            }
        }
        // A single outcome column; extra outcome picks become overlaps with X.
        if let Some(y) = outcome.first() {
            roles.outcome = Some(OutcomeRole::Single(y.clone()));
            for extra in &outcome[1..] {
                roles.x_covars.push(extra.clone());
                overlap |= roles.x_covars.iter().filter(|c| *c == extra).count() > 1;
            }
        }
        let result = declare_roles(role_table(), roles.clone());
        prop_assert_eq!(result.is_ok(), !overlap && binary_treatment, "{:?} -> {:?}", roles, result.err());
    }

    #[test]
    fn covered_populations_raise_no_flags(
        trial in prop::collection::vec(-10.0f64..10.0, 2..40),
        picks in prop::collection::vec(0.0f64..1.0, 1..60),
        levels in prop::collection::vec(0usize..4, 1..40),
    ) {
        let (lo, hi) = trial.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pop_x: Vec<f64> = picks.iter().map(|p| lo + p * (hi - lo)).collect();
        let names = ["a", "b", "c", "d"];
        let t_levels: Vec<&str> = (0..trial.len()).map(|i| names[i % 4]).collect();
        let p_levels: Vec<&str> = (0..pop_x.len()).map(|i| names[levels[i % levels.len()]]).collect();
        let all: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let t = DataTable::new(vec![
            Column::numeric("x", trial.clone()),
            Column::categorical("g", &t_levels, Some(all.clone())).unwrap(),
        ]).unwrap();
        let p = DataTable::new(vec![
            Column::numeric("x", pop_x),
            Column::categorical("g", &p_levels, Some(all)).unwrap(),
        ]).unwrap();
        // Fewer than four trial rows leave some levels unobserved.
        prop_assume!(trial.len() >= 4);
        let pop = PopulationTarget::dataset(PopulationKind::FullDataset, p.clone()).unwrap();
        let rep = check_modifier_coverage(&t, &pop, &["x".into(), "g".into()]).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep.flags());
        prop_assert_eq!(rep.trimmed.unwrap().n_rows(), p.n_rows());
    }

    #[test]
    fn trimming_keeps_every_covered_row(
        trial in prop::collection::vec(-5.0f64..5.0, 2..30),
        pop_x in prop::collection::vec(-8.0f64..8.0, 1..80),
    ) {
        let (lo, hi) = trial.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let t = DataTable::new(vec![Column::numeric("x", trial)]).unwrap();
        let p = DataTable::new(vec![Column::numeric("x", pop_x.clone())]).unwrap();
        let pop = PopulationTarget::dataset(PopulationKind::FullDataset, p).unwrap();
        let rep = check_modifier_coverage(&t, &pop, &["x".into()]).unwrap();
        let kept = rep.trimmed.as_ref().unwrap();
        let inside: Vec<f64> = pop_x.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
        prop_assert_eq!(kept.numeric("x").unwrap(), inside.as_slice());
        prop_assert_eq!(rep.passed(), inside.len() == pop_x.len());
    }
}
