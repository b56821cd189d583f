use std::fmt::Write;

use profiler_core::simulation::StudySummary;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

/// TPR and FPR by grid rank, with the nominal alpha as a dotted line.
pub fn rate_plot(summary: &StudySummary) -> String {
    let n = summary.ranks.len().max(2) as f64;
    let x = |rank: usize| PAD + (rank as f64 - 1.0) / (n - 1.0) * (W - 2.0 * PAD);
    let y = |rate: f64| H - PAD - rate * (H - 2.0 * PAD);
    let line = |rates: Vec<(usize, f64)>| {
        rates
            .iter()
            .map(|(k, r)| format!("{:.1},{:.1}", x(*k), y(*r)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let tpr = line(summary.ranks.iter().filter_map(|r| r.tpr.map(|t| (r.rank, t.rate))).collect());
    let fpr = line(summary.ranks.iter().filter_map(|r| r.fpr.map(|t| (r.rank, t.rate))).collect());

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#, PAD - 6.0, y(tick) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" x2="{r}" y1="{a:.1}" y2="{a:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
        r = W - PAD,
        a = y(summary.scenario.alpha)
    );
    let _ = writeln!(s, r#"<polyline points="{tpr}" fill="none" stroke="firebrick" stroke-width="2"/>"#);
    let _ = writeln!(s, r#"<polyline points="{fpr}" fill="none" stroke="steelblue" stroke-width="2"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">grid rank</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="20">n={} p={} r={} p_cat={}: TPR (red), FPR (blue)</text>"#,
        summary.scenario.n, summary.scenario.p, summary.scenario.r, summary.scenario.p_cat
    );
    s.push_str("</svg>\n");
    s
}
