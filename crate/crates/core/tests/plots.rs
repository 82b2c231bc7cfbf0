use std::fs;
use std::path::PathBuf;

use memabs::report::emit_plots;

fn golden(name: &str) -> (String, String) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let csv = fs::read_to_string(dir.join(format!("{name}.csv"))).unwrap();
    let gp = fs::read_to_string(dir.join(format!("{name}.gp"))).unwrap();
    (csv, gp)
}

#[test]
fn memory_curves_script() {
    let (csv, gp) = golden("case1");
    assert_eq!(emit_plots(&csv, "case1.csv").unwrap(), gp);
}

#[test]
fn comparison_script() {
    let (csv, gp) = golden("case2");
    assert_eq!(emit_plots(&csv, "case2.csv").unwrap(), gp);
}

#[test]
fn bounds_script() {
    let (csv, gp) = golden("bounds");
    assert_eq!(emit_plots(&csv, "bounds.csv").unwrap(), gp);
}

#[test]
fn quotes_in_file_names_are_escaped() {
    let (csv, _) = golden("case1");
    let script = emit_plots(&csv, "it's.csv").unwrap();
    assert!(script.contains("set output 'it''s.png'"));
    assert!(script.contains("plot 'it''s.csv' skip 1"));
}

#[test]
fn malformed_inputs_are_errors() {
    assert!(emit_plots("k,cell,probability\n0,1,0.5\n", "p.csv").is_err());
    assert!(emit_plots("k,tv_l1,stderr_l1\n0,abc,0.1\n", "c.csv").is_err());
    assert!(emit_plots("k,tv_l1,stderr_l1\n0,0.1\n", "c.csv").is_err());
}
