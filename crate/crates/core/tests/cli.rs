use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misadapt"))
        .args(args)
        .env_remove("MISADAPT_LOOKUP")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

const TURNOUT: [&str; 9] = [
    "estimate", "--yu", "0.0043", "--se-u", "0.0014", "--yr", "0.0026", "--se-r", "0.0009",
];

#[test]
fn turnout_table_is_deterministic() {
    let mut args = TURNOUT.to_vec();
    args.push("--rho-uo=-0.77");
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for needle in ["Adaptive", "Soft-threshold", "Pre-test", "GMM", "inf", "conservative"] {
        assert!(text.contains(needle), "missing {needle}:\n{text}");
    }
}

#[test]
fn equal_estimates_return_the_common_value() {
    let out = run(&[
        "estimate", "--yu", "1.5", "--se-u", "1", "--yr", "1.5", "--se-r", "0.5", "--assume-efficient", "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(csv_column(&text, "t_o").iter().all(|t| *t == 0.0));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (m, e) = (
        header.iter().position(|h| *h == "method").unwrap(),
        header.iter().position(|h| *h == "estimate").unwrap(),
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[m] != "Y_O" {
            assert_eq!(f[e].parse::<f64>().unwrap(), 1.5, "{line}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    // no covariance flag
    let mut args = TURNOUT.to_vec();
    assert_eq!(run(&args).status.code(), Some(2));
    // two covariance flags
    args.extend(["--assume-efficient", "--cov-ur", "0.1"]);
    assert_eq!(run(&args).status.code(), Some(2));
    assert_eq!(run(&["risk-curve"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numeric_errors_exit_with_three_and_name_the_error() {
    let out = run(&["estimate", "--yu", "1", "--se-u", "1", "--yr", "0", "--se-r", "1", "--cov-ur", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NonPositiveSigmaO"));
}

#[test]
fn file_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.csv");
    let out = run(&["estimate", "--input", missing.to_str().unwrap(), "--assume-efficient"]);
    assert_eq!(out.status.code(), Some(4));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "not a table\n").unwrap();
    assert_eq!(run(&["lookup", "inspect", bad.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn batch_input_gives_one_block_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.csv");
    std::fs::write(&input, "label,y_u,se_u,y_r,se_r,rho_uo\na,1,1,0.5,0.5,-0.9\nb,2,1,2.1,0.5,\n").unwrap();
    let out = run(&["estimate", "--input", input.to_str().unwrap(), "--assume-efficient", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("a,")).count(), 7);
    assert_eq!(text.lines().filter(|l| l.starts_with("b,")).count(), 7);
}

#[test]
fn risk_curve_closed_form_columns() {
    let out = run(&["risk-curve", "--rho=-0.524", "--methods", "yu,gmm,pretest", "--bstep", "0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let b = csv_column(&text, "b_tilde");
    assert_eq!(b.len(), 19);
    assert!(csv_column(&text, "yu").iter().all(|v| *v == 1.0));
    let rho2 = 0.524f64 * 0.524;
    for (g, b) in csv_column(&text, "gmm").iter().zip(&b) {
        assert!((g - ((1.0 - rho2) + rho2 * b * b)).abs() < 1e-7);
    }
    let oracle = csv_column(&text, "oracle");
    for col in ["yu", "gmm", "pretest"] {
        for (o, v) in oracle.iter().zip(csv_column(&text, col)) {
            assert!(*o <= v + 1e-6);
        }
    }
    // the pre-test's risk peaks inside the rejection region's edge
    let pre = csv_column(&text, "pretest");
    let peak = b[pre.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0];
    assert!((1.0..=3.5).contains(&peak), "peak at {peak}");
}

#[test]
fn multivar_with_uncorrelated_contrasts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mv.toml");
    // cov(Y_U, Y_Rj) = var(Y_U) makes Y_U uncorrelated with both contrasts
    std::fs::write(
        &path,
        "y_u = 1.0\ny_r = [0.5, 0.8]\nsigma = [[1.0, 1.0, 1.0], [1.0, 1.5, 1.2], [1.0, 1.2, 1.4]]\nordering_confirmed = true\n",
    )
    .unwrap();
    let out = run(&["multivar", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let regrets: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with('('))
        .map(|l| l.split_whitespace().last().unwrap())
        .collect();
    assert_eq!(regrets, ["0%", "0%", "0%"], "{text}");

    std::fs::write(&path, "y_u = 1.0\ny_r = [0.5]\nsigma = [[1.0, 0.5], [0.5, 0.6]]\nordering_confirmed = false\n")
        .unwrap();
    assert_eq!(run(&["multivar", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn lookup_build_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.txt");
    let p = path.to_str().unwrap();
    let built = run(&["lookup", "build", "--output", p]);
    assert_eq!(built.status.code(), Some(0), "{}", String::from_utf8_lossy(&built.stderr));
    let out = run(&["lookup", "inspect", p]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("61 entries"), "{text}");
    // node 0.77^2 sits between k = 20 and 21; A*-1 there is near 44%
    let row = text.lines().find(|l| l.trim_start().starts_with("20 ")).unwrap();
    let a: f64 = row.split_whitespace().nth(3).unwrap().trim_end_matches('%').parse().unwrap();
    assert!((35.0..50.0).contains(&a), "{row}");

    let mut args = TURNOUT.to_vec();
    args.extend(["--rho-uo=-0.77", "--lookup", p, "--format", "csv"]);
    let fast = run(&args);
    assert_eq!(fast.status.code(), Some(0));
    let text = stdout(&fast);
    let regret = csv_column(
        &text.lines().filter(|l| l.starts_with("label") || l.contains(",Adaptive,")).collect::<Vec<_>>().join("\n"),
        "max_regret_pct",
    );
    assert!((regret[0] - 44.0).abs() < 3.0);
}
