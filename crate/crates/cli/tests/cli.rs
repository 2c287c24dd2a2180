use std::path::{Path, PathBuf};
use std::process::Command;

use qmaj_cli::cert::Certificate;
use qmaj_cli::format::MatrixFile;
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> String {
    root().join("fixtures").join(name).display().to_string()
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = qmaj_cli::run(std::iter::once("qmaj").chain(args.iter().copied()), &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn verdict(out: &str) -> &str {
    out.lines()
        .find_map(|l| l.strip_prefix("VERDICT "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap_or_else(|| panic!("no VERDICT line in {out:?}"))
}

fn tokens_match(want: &str, got: &str) -> bool {
    let split = |s: &str| {
        s.split(|c: char| c.is_whitespace() || c == '=' || c == '(' || c == ')')
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    let (w, g) = (split(want), split(got));
    w.len() == g.len()
        && w.iter()
            .zip(&g)
            .all(|(a, b)| match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => (x - y).abs() <= 1e-6 * (1.0 + x.abs()),
                _ => a == b,
            })
}

#[test]
fn walkthrough_matches_cli_output() {
    let doc = std::fs::read_to_string(root().join("docs/WALKTHROUGH.md")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tmp = format!("{}/", dir.path().display());
    let mut blocks = Vec::new();
    let mut current: Option<Vec<String>> = None;
    for line in doc.lines() {
        match (&mut current, line.trim_end()) {
            (None, "```console") => current = Some(Vec::new()),
            (Some(_), "```") => blocks.push(current.take().unwrap()),
            (Some(b), l) => b.push(l.to_owned()),
            _ => {}
        }
    }
    assert!(blocks.len() >= 5, "expected console blocks in the walkthrough");
    std::env::set_current_dir(root()).unwrap();
    let mut checked = 0;
    for block in blocks {
        let mut cmd: Option<String> = None;
        let mut expected = Vec::new();
        let flush = |cmd: &Option<String>, expected: &Vec<String>| {
            let Some(c) = cmd else { return };
            let c = c.replace("/tmp/", &tmp);
            let args: Vec<&str> = c.split_whitespace().skip(1).collect();
            let r = run(&args);
            let got: Vec<&str> = r.out.lines().collect();
            assert_eq!(got.len(), expected.len(), "{c}\n{}", r.out);
            for (w, g) in expected.iter().zip(got) {
                assert!(tokens_match(w, g), "{c}\nwant {w}\ngot  {g}");
            }
        };
        for line in block {
            if let Some(c) = line.strip_prefix("$ ") {
                flush(&cmd, &expected);
                cmd = Some(c.to_owned());
                expected.clear();
                checked += 1;
            } else {
                expected.push(line);
            }
        }
        flush(&cmd, &expected);
    }
    assert!(checked >= 8);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_qmaj");
    let ok = Command::new(bin)
        .args(["hmin", &fixture("max_entangled_2x2.json")])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("H_min = -1.000000 bits"));

    let no = Command::new(bin)
        .args([
            "majorize",
            &fixture("mixed_product_2x2.json"),
            &fixture("max_entangled_2x2.json"),
        ])
        .output()
        .unwrap();
    assert_eq!(no.status.code(), Some(1));

    let bad = Command::new(bin)
        .args(["hmin", "/nonexistent/state.json"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(3));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("ERROR input "));
}

#[test]
fn malformed_inputs_give_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("truncated.json", r#"{"kind":"state","dims":[2,2],"data":["#),
        ("nan.json", r#"{"kind":"state","dims":[1,1],"data":[[["NaN",0]]]}"#),
        ("inf.json", r#"{"kind":"state","dims":[1,1],"data":[[["inf",0]]]}"#),
        ("shape.json", r#"{"kind":"state","dims":[2,2],"data":[[[1,0]]]}"#),
        ("trace.json", r#"{"kind":"state","dims":[1,1],"data":[[[2,0]]]}"#),
        (
            "channel.json",
            r#"{"kind":"channel","dims":{"d_in":1,"d_out":1},"data":[[[1,0]]]}"#,
        ),
    ];
    for (name, text) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        let r = run(&["hmin", p.to_str().unwrap()]);
        assert_eq!(r.code, 3, "{name}: {}", r.err);
        assert_eq!(r.err.lines().count(), 1, "{name}");
        assert!(r.err.starts_with("ERROR input "), "{name}: {}", r.err);
        assert!(r.out.is_empty(), "{name}");
    }
    for args in [
        &["hmin"][..],
        &["frobnicate"],
        &["majorize", "a.json"],
        &["selftest", "--n", "x"],
    ] {
        let r = run(args);
        assert_eq!(r.code, 3, "{args:?}");
        assert_eq!(r.err.lines().count(), 1, "{args:?}: {}", r.err);
        assert!(r.err.starts_with("ERROR input "));
    }
}

#[test]
fn every_certificate_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let family = fixture("family_obstruction.json");
    let (me, mp, pr) = (
        fixture("max_entangled_2x2.json"),
        fixture("mixed_product_2x2.json"),
        fixture("product_2x2.json"),
    );
    let (id, pf, rep) = (
        fixture("identity_2.json"),
        fixture("phase_flip_2.json"),
        fixture("replace_mixed_2.json"),
    );
    let cases: Vec<(&str, Vec<&str>, &str, i32)> = vec![
        ("hmin", vec![&me], "", 0),
        ("majorize", vec![&me, &pr], "Majorized", 0),
        ("majorize", vec![&mp, &me], "NotMajorized", 1),
        ("convert-family", vec![&family], "NotMajorized", 1),
        ("factor-post", vec![&id, &pf], "Factors", 0),
        ("factor-post", vec![&rep, &id], "NoFactor", 1),
        ("factor-pre", vec![&id, &pf], "Factors", 0),
        ("factor-pre", vec![&rep, &id], "NoFactor", 1),
        ("diamond", vec![&id, &pf], "", 0),
        ("approx-convert", vec![&mp, &me], "", 0),
        ("approx-factor", vec![&rep, &id], "", 0),
    ];
    for (i, (cmd, inputs, word, code)) in cases.into_iter().enumerate() {
        let cert = dir.path().join(format!("{i}.json"));
        let cert = cert.to_str().unwrap();
        let mut args = vec![cmd];
        args.extend(&inputs);
        args.extend(["--cert", cert]);
        let r = run(&args);
        assert_eq!(r.code, code, "{cmd}: {}{}", r.out, r.err);
        if !word.is_empty() {
            assert_eq!(verdict(&r.out), word, "{cmd}");
        }

        let text = std::fs::read_to_string(cert).unwrap();
        let parsed = Certificate::parse(&text).unwrap();
        assert_eq!(parsed.command, cmd);
        assert_eq!(
            parsed.to_json(),
            text.trim_end(),
            "{cmd}: certificate does not round-trip"
        );

        let mut vargs = vec!["verify", cert];
        vargs.extend(&inputs);
        let v = run(&vargs);
        assert_eq!(v.code, 0, "{cmd}: {}{}", v.out, v.err);
        assert_eq!(verdict(&v.out), "Verified", "{cmd}");
    }
}

fn rewrite(path: &Path, edit: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn tampered_certificates_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (me, mp) = (fixture("max_entangled_2x2.json"), fixture("mixed_product_2x2.json"));
    let (id, pf, rep) = (
        fixture("identity_2.json"),
        fixture("phase_flip_2.json"),
        fixture("replace_mixed_2.json"),
    );

    let w = dir.path().join("witness.json");
    assert_eq!(run(&["majorize", &mp, &me, "--cert", w.to_str().unwrap()]).code, 1);
    // Swapping the states turns a valid separation into a useless one.
    let r = run(&["verify", w.to_str().unwrap(), &mp, &mp]);
    assert_eq!(verdict(&r.out), "Rejected");
    assert_eq!(r.code, 1);
    rewrite(&w, |v| v["witness"]["hmin_rho"] = Value::from(0.25));
    assert_eq!(
        verdict(&run(&["verify", w.to_str().unwrap(), &mp, &me]).out),
        "Rejected"
    );

    let f = dir.path().join("factor.json");
    assert_eq!(run(&["factor-post", &id, &pf, "--cert", f.to_str().unwrap()]).code, 0);
    let replace = std::fs::read_to_string(&rep).unwrap();
    rewrite(&f, |v| v["channel"] = serde_json::from_str(&replace).unwrap());
    let r = run(&["verify", f.to_str().unwrap(), &id, &pf]);
    assert_eq!(verdict(&r.out), "Rejected");

    let d = dir.path().join("diamond.json");
    assert_eq!(run(&["diamond", &id, &pf, "--cert", d.to_str().unwrap()]).code, 0);
    rewrite(&d, |v| {
        let m = v["margins"].as_object_mut().unwrap();
        for x in m.values_mut() {
            if let Some(f) = x.as_f64() {
                *x = Value::from(f * 0.5);
            }
        }
    });
    assert_eq!(
        verdict(&run(&["verify", d.to_str().unwrap(), &id, &pf]).out),
        "Rejected"
    );
}

#[test]
fn random_instances_are_deterministic() {
    let a = run(&["random", "state", "--dim", "2", "--seed", "7"]);
    let b = run(&["random", "state", "--dim", "2", "--seed", "7"]);
    let c = run(&["random", "state", "--dim", "2", "--seed", "8"]);
    assert_eq!(a.code, 0);
    assert_eq!(a.out, b.out);
    assert_ne!(a.out, c.out);
    let rho = MatrixFile::parse(&a.out).unwrap().into_state().unwrap();
    assert_eq!(rho.dims().total(), 4);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ch.json");
    let r = run(&[
        "random",
        "channel",
        "--dim",
        "2",
        "--d-out",
        "3",
        "--env",
        "2",
        "--seed",
        "1",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let ch = MatrixFile::parse(&std::fs::read_to_string(&p).unwrap())
        .unwrap()
        .into_channel()
        .unwrap();
    assert_eq!((ch.d_in(), ch.d_out()), (2, 3));
}

#[test]
fn selftest_report_is_reproducible() {
    let a = run(&["selftest", "--n", "3", "--seed", "5"]);
    let b = run(&["selftest", "--n", "3", "--seed", "5"]);
    assert_eq!(a.code, 0, "{}", a.out);
    assert_eq!(a.out, b.out);
    let v: Value = serde_json::from_str(&a.out).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}
