//! Math-to-code coverage table built from the `/// Math:` lines in the
//! library sources, plus a relative-link checker for the markdown docs.

use std::fmt::Write as _;
use std::path::Path;

const SOURCES: &[(&str, &str)] = &[
    ("linalg", include_str!("linalg.rs")),
    ("channel", include_str!("channel.rs")),
    ("conic", include_str!("conic.rs")),
    ("entropy", include_str!("entropy.rs")),
    ("majorize", include_str!("majorize.rs")),
    ("factorize", include_str!("factorize.rs")),
    ("approx", include_str!("approx.rs")),
    ("oracle", include_str!("oracle.rs")),
];

/// Functions that must carry a `Math:` line; the table build fails without them.
pub const REQUIRED: &[&str] = &[
    "linalg::partial_trace",
    "linalg::operator_schmidt",
    "linalg::trace_norm",
    "channel::apply",
    "channel::apply_to_factor",
    "channel::adjoint",
    "channel::validate",
    "channel::eb_from_ensemble",
    "entropy::hmin",
    "entropy::hmin_dual",
    "entropy::lambda_selfadjoint",
    "entropy::linfl1_norm",
    "majorize::is_majorized",
    "majorize::sup_pairing",
    "majorize::extract_witness",
    "majorize::convert_family",
    "majorize::finite_subfamily_scan",
    "factorize::post_factor",
    "factorize::pre_factor",
    "factorize::choi_majorization_equiv",
    "approx::diamond_norm",
    "approx::diamond_norm_sup_form",
    "approx::min_conversion_error",
    "approx::check_apro1",
    "approx::min_post_factor_error",
    "approx::check_apro2",
    "approx::trace_dist_variational",
    "oracle::grid_hmin",
    "oracle::monotonicity_suite",
];

/// Results with no finite-dimensional computational content.
pub const NOT_IMPLEMENTED: &[(&str, &str)] = &[
    (
        "injectivity characterization via coincidence of tensor norms",
        "automatic at finite dimension, where every algebra is injective",
    ),
    (
        "semifinite traces, hyperfiniteness and weak*-closure arguments",
        "closedness holds automatically at finite dimension",
    ),
    (
        "tracial Hahn-Banach separation theorems",
        "their finite-dimensional content is the witness extraction in `majorize`",
    ),
    (
        "operator-space and Banach-space separation generalizations",
        "infinite-dimensional only",
    ),
    (
        "approximation by projections of vanishing trace",
        "concerns atomless algebras; no finite-dimensional analogue",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MathEntry {
    pub result: String,
    pub module: &'static str,
    pub item: String,
    /// 1-based line of the `fn` item.
    pub line: usize,
}

impl MathEntry {
    pub fn path(&self) -> String {
        format!("{}::{}", self.module, self.item)
    }
}

fn fn_name(line: &str) -> Option<&str> {
    let rest = &line[line.find("fn ")? + 3..];
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_'))?;
    Some(&rest[..end])
}

/// Every `/// Math:` line paired with the function it documents.
pub fn math_entries() -> Vec<MathEntry> {
    let mut out = Vec::new();
    for (module, src) in SOURCES {
        let lines: Vec<&str> = src.lines().collect();
        for (i, l) in lines.iter().enumerate() {
            let Some(result) = l.trim().strip_prefix("/// Math:") else {
                continue;
            };
            let item = lines[i + 1..]
                .iter()
                .enumerate()
                .find(|(_, l)| !l.trim_start().starts_with("///") && !l.trim_start().starts_with("#["))
                .and_then(|(k, l)| fn_name(l).map(|n| (i + 2 + k, n)));
            if let Some((line, name)) = item {
                out.push(MathEntry {
                    result: result.trim().to_string(),
                    module,
                    item: name.to_string(),
                    line,
                });
            }
        }
    }
    out
}

/// Required functions without a `Math:` line.
pub fn missing_required(entries: &[MathEntry]) -> Vec<&'static str> {
    REQUIRED
        .iter()
        .filter(|r| !entries.iter().any(|e| e.path() == **r))
        .copied()
        .collect()
}

/// The markdown table written to `docs/MATH_MAP.md`, with links relative to `docs/`.
pub fn render_math_map() -> String {
    let entries = math_entries();
    let mut s = String::new();
    s.push_str("# Math-to-code map\n\n");
    s.push_str("Generated from the `/// Math:` lines in `crates/core/src`; do not edit by hand.\n");
    s.push_str("Regenerate with `QMAJ_BLESS=1 cargo test -p qmaj --test docs`.\n\n");
    s.push_str("| Result | Function | Source |\n|---|---|---|\n");
    for e in &entries {
        let _ = writeln!(
            s,
            "| {} | `{}` | [{}.rs:{}](../crates/core/src/{}.rs#L{}) |",
            e.result,
            e.path(),
            e.module,
            e.line,
            e.module,
            e.line
        );
    }
    s.push_str("\n## Not implemented\n\n| Result | Reason |\n|---|---|\n");
    for (r, why) in NOT_IMPLEMENTED {
        let _ = writeln!(s, "| {r} | {why} |");
    }
    s
}

/// Relative link targets in `markdown` that do not exist under `base`.
/// External links and pure anchors are skipped.
pub fn broken_links(markdown: &str, base: &Path) -> Vec<String> {
    let mut bad = Vec::new();
    let mut rest = markdown;
    while let Some(i) = rest.find("](") {
        rest = &rest[i + 2..];
        let Some(end) = rest.find(')') else { break };
        let target = &rest[..end];
        rest = &rest[end..];
        if target.contains("://") || target.starts_with('#') || target.starts_with("mailto:") {
            continue;
        }
        let file = target.split('#').next().unwrap_or(target);
        if !base.join(file).exists() {
            bad.push(target.to_string());
        }
    }
    bad
}
