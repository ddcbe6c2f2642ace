//! Metrics CSV to plot-ready series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use eccl_core::curriculum::METRICS_HEADER;
use eccl_core::ScheduleKind;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Row {
    maps_played: usize,
    phase: String,
    mean_cycle_loss: Option<f64>,
    eval_score: Option<f64>,
    schedule: ScheduleKind,
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Score,
    Loss,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Score => "score",
            Metric::Loss => "loss",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub seed: u64,
    pub maps_played: usize,
    pub value: f64,
}

pub type Series = BTreeMap<(ScheduleKind, Metric), Vec<Point>>;

/// Parses one metrics CSV. Errors carry the 1-based line number.
pub fn read_metrics(text: &str, series: &mut Series) -> anyhow::Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| anyhow!("line 1: {e}"))?.clone();
    let expected: Vec<&str> = METRICS_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        bail!("line 1: expected header `{METRICS_HEADER}`");
    }
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => anyhow!("line {}: {e}", p.line()),
            None => anyhow!("{e}"),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec.deserialize(Some(&header)).map_err(|e| anyhow!("line {line}: {e}"))?;
        let point = |value| Point { seed: row.seed, maps_played: row.maps_played, value };
        match row.phase.as_str() {
            "eval" => {
                let score = row.eval_score.ok_or_else(|| anyhow!("line {line}: eval row without eval_score"))?;
                series.entry((row.schedule, Metric::Score)).or_default().push(point(score));
            }
            "train" => {
                if let Some(loss) = row.mean_cycle_loss {
                    series.entry((row.schedule, Metric::Loss)).or_default().push(point(loss));
                }
            }
            "error" => {}
            other => bail!("line {line}: unknown phase `{other}`"),
        }
        series.entry((row.schedule, Metric::Score)).or_default();
        series.entry((row.schedule, Metric::Loss)).or_default();
        rows += 1;
    }
    Ok(rows)
}

fn series_csv(points: &[Point]) -> String {
    let mut s = String::from("seed,maps_played,value\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.seed, p.maps_played, p.value);
    }
    s
}

const COLORS: [&str; 3] = ["#1b9e77", "#d95f02", "#7570b3"];

fn color(kind: ScheduleKind) -> &'static str {
    COLORS[ScheduleKind::ALL.iter().position(|&k| k == kind).unwrap_or(0)]
}

/// Line chart of every (schedule, seed) curve for one metric.
pub fn svg_chart(metric: Metric, series: &Series) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let curves: Vec<(ScheduleKind, &Vec<Point>)> =
        series.iter().filter(|((_, m), _)| *m == metric).map(|((k, _), v)| (*k, v)).collect();
    let all = curves.iter().flat_map(|(_, v)| v.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in all {
        x0 = x0.min(p.maps_played as f64);
        x1 = x1.max(p.maps_played as f64);
        y0 = y0.min(p.value);
        y1 = y1.max(p.value);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (xs, ys) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let px = |x: f64| pad + (x - x0) / xs * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / ys * (h - 2.0 * pad);

    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    s.push('\n');
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">maps played</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, metric.name());
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" text-anchor="middle">{x0}</text>"#, h - pad + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#, w - pad, h - pad + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, pad - 4.0, h - pad);
    let _ = writeln!(s, r#"<text x="{}" y="{pad}" text-anchor="end">{y1:.3}</text>"#, pad - 4.0);
    for (i, (kind, points)) in curves.iter().enumerate() {
        let mut by_seed: BTreeMap<u64, Vec<&Point>> = BTreeMap::new();
        for p in points.iter() {
            by_seed.entry(p.seed).or_default().push(p);
        }
        for pts in by_seed.values() {
            let coords: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.maps_played as f64), py(p.value))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}"/>"#, coords.join(" "), color(*kind));
        }
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{}">{kind}</text>"#, w - pad - 90.0, color(*kind));
    }
    s.push_str("</svg>\n");
    s
}

pub fn export(inputs: &[PathBuf], out: &Path, svg: bool) -> anyhow::Result<()> {
    let mut series = Series::new();
    let mut rows = 0;
    for path in inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        rows += read_metrics(&text, &mut series).with_context(|| path.display().to_string())?;
    }
    if rows == 0 {
        bail!("no metrics rows in {}", inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for ((kind, metric), points) in &series {
        let path = out.join(format!("{kind}_{}.csv", metric.name()));
        fs::write(&path, series_csv(points))?;
        eprintln!("wrote {}", path.display());
    }
    if svg {
        for metric in [Metric::Score, Metric::Loss] {
            let path = out.join(format!("{}.svg", metric.name()));
            fs::write(&path, svg_chart(metric, &series))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "maps_played,phase,mean_cycle_loss,eval_score,schedule,seed,wall_ms\n\
        0,eval,,1.5,evolved,3,0\n\
        5,train,0.25,,evolved,3,0\n\
        10,train,,,evolved,3,0\n\
        10,eval,,2,evolved,3,0\n";

    #[test]
    fn values_pass_through_in_order() {
        let mut s = Series::new();
        assert_eq!(read_metrics(SAMPLE, &mut s).unwrap(), 4);
        let score: Vec<f64> = s[&(ScheduleKind::EvolvedOnly, Metric::Score)].iter().map(|p| p.value).collect();
        assert_eq!(score, vec![1.5, 2.0]);
        let loss = &s[&(ScheduleKind::EvolvedOnly, Metric::Loss)];
        assert_eq!(loss, &vec![Point { seed: 3, maps_played: 5, value: 0.25 }]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = format!("{SAMPLE}15,train,abc,,evolved,3,0\n");
        let e = read_metrics(&bad, &mut Series::new()).unwrap_err().to_string();
        assert!(e.starts_with("line 6:"), "{e}");
        let bad = format!("{SAMPLE}15,sleep,,,evolved,3,0\n");
        let e = read_metrics(&bad, &mut Series::new()).unwrap_err().to_string();
        assert!(e.starts_with("line 6:") && e.contains("sleep"), "{e}");
        let bad = "maps_played,phase\n1,eval\n";
        assert!(read_metrics(bad, &mut Series::new()).unwrap_err().to_string().starts_with("line 1:"));
        let short = format!("{SAMPLE}20,eval\n");
        assert!(read_metrics(&short, &mut Series::new()).unwrap_err().to_string().starts_with("line 6:"));
    }

    #[test]
    fn chart_has_one_line_per_seed() {
        let mut s = Series::new();
        read_metrics(SAMPLE, &mut s).unwrap();
        read_metrics(&SAMPLE.replace(",3,0", ",4,0"), &mut s).unwrap();
        let svg = svg_chart(Metric::Score, &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }
}
