// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static HTML heatmap of attribution scores.
//!
//! Context tokens are shaded by `min(z, Z_CAP) / Z_CAP` for positive `z`;
//! tokens with `z <= 0` and instruction tokens are left unshaded. Each
//! selected step gets a section with the prompt (`Q`) and the text generated
//! so far (`G`), ending with the token produced at that step.

use std::fmt::Write as _;

use attnscope_core::{AttentionTrace, Segment};

use crate::error::{CliError, CliResult};

/// Z-score at which highlighting saturates.
pub const Z_CAP: f64 = 3.0;

/// Highlight opacity in `(0, 1]`, or `None` for no highlight.
pub fn highlight_intensity(z: f64) -> Option<f64> {
    (z > 0.0).then(|| z.min(Z_CAP) / Z_CAP)
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.9}\
.tok{padding:0 .15em;border-radius:3px}\
.inst{color:#777}\
.cur{font-weight:bold;text-decoration:underline}\
.step{border-top:1px solid #ccc;margin-top:1.5em}";

/// Renders the selected 1-based `steps` of `per_step_z` over `trace`.
pub fn render_report(trace: &AttentionTrace, per_step_z: &[Vec<f64>], steps: &[usize], title: &str) -> CliResult<String> {
    let n = trace.input_len;
    for &k in steps {
        if k == 0 || k > per_step_z.len() || k > trace.num_steps() {
            return Err(CliError::Usage(format!("step {k} out of range 1..={}", per_step_z.len().min(trace.num_steps()))));
        }
        if per_step_z[k - 1].len() != n {
            return Err(CliError::Data(format!("step {k} has {} scores for {n} prompt tokens", per_step_z[k - 1].len())));
        }
    }
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(html, "<title>{}</title>", escape(title));
    let _ = writeln!(html, "<style>{STYLE}</style>");
    html.push_str("</head>\n<body>\n");
    let _ = writeln!(html, "<h1>{}</h1>", escape(title));
    for &k in steps {
        let z = &per_step_z[k - 1];
        let _ = writeln!(html, "<section class=\"step\" id=\"step-{k}\">");
        let _ = writeln!(html, "<h2>Step {k}</h2>");
        html.push_str("<p class=\"q\"><b>Q:</b>");
        for tok in &trace.tokens[..n] {
            let text = escape(&tok.text);
            let p = tok.position;
            match (tok.segment, highlight_intensity(z[p])) {
                (Segment::Context, Some(a)) => {
                    let _ = write!(
                        html,
                        " <span class=\"tok\" style=\"background:rgba(220,38,38,{a:.3})\" title=\"z={:.3}\">{text}</span>",
                        z[p]
                    );
                }
                (Segment::Context, None) => {
                    let _ = write!(html, " <span class=\"tok\" title=\"z={:.3}\">{text}</span>", z[p]);
                }
                _ => {
                    let _ = write!(html, " <span class=\"tok inst\">{text}</span>");
                }
            }
        }
        html.push_str("</p>\n<p class=\"g\"><b>G:</b>");
        for (i, tok) in trace.tokens[n..n + k].iter().enumerate() {
            let class = if i + 1 == k { "tok cur" } else { "tok" };
            let _ = write!(html, " <span class=\"{class}\">{}</span>", escape(&tok.text));
        }
        html.push_str("</p>\n</section>\n");
    }
    html.push_str("</body>\n</html>\n");
    Ok(html)
}
