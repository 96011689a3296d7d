//! Ablation harness: the four loss-component configurations plus the three
//! single-guide variants, each trained and scored on the same data.

use std::fmt::Write as _;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use diffmvr_core::dataio::VideoSequence;
use diffmvr_core::diffusion::GuidanceMode;
use diffmvr_core::models::{save_checkpoint, ModelParams};
use diffmvr_core::Result;

use crate::commands::{eval_subset, inpaint_into, load_split, prepare, score, train_prepared, vae_params};
use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// Guidance components, motion loss throughout; relative to DiffMVR.
    Guidance,
    /// Loss components; relative to the baseline.
    Loss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub block: Block,
    pub name: &'static str,
    pub slug: &'static str,
    pub guidance: GuidanceMode,
    pub motion_loss: bool,
}

const fn v(block: Block, name: &'static str, slug: &'static str, guidance: GuidanceMode, motion_loss: bool) -> Variant {
    Variant { block, name, slug, guidance, motion_loss }
}

pub const BASELINE: usize = 0;
pub const BASELINE_DUAL: usize = 1;
pub const DIFFMVR: usize = 3;

pub const VARIANTS: [Variant; 7] = [
    v(Block::Loss, "baseline", "baseline", GuidanceMode::Past, false),
    v(Block::Loss, "baseline + dual", "baseline_dual", GuidanceMode::Dual, false),
    v(Block::Loss, "baseline + motion", "baseline_motion", GuidanceMode::Past, true),
    v(Block::Loss, "DiffMVR: baseline + dual + motion", "diffmvr", GuidanceMode::Dual, true),
    v(Block::Guidance, "single guide (symmetric)", "single_sym", GuidanceMode::Sym, true),
    v(Block::Guidance, "single guide (past frame)", "single_past", GuidanceMode::Past, true),
    v(Block::Guidance, "single guide (present frame)", "single_present", GuidanceMode::Present, true),
];

/// Columns in table order: fid_proxy, masked SSIM, TC, fvd_proxy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores(pub [f64; 4]);

pub const COLUMNS: [&str; 4] = ["fid_proxy", "ssim", "tc", "fvd_proxy"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub result: std::result::Result<Scores, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// `(variant − reference) / reference`.
pub fn relative_change(variant: f64, reference: f64) -> f64 {
    (variant - reference) / reference
}

fn arrow(d: f64) -> String {
    if d >= 0.0 {
        format!("▲{:.1}%", 100.0 * d)
    } else {
        format!("▼{:.1}%", -100.0 * d)
    }
}

impl AblationTable {
    pub fn reference(&self, i: usize) -> Option<usize> {
        let r = match self.rows[i].variant.block {
            Block::Loss => BASELINE,
            Block::Guidance => DIFFMVR,
        };
        (r != i).then_some(r)
    }

    pub fn scores(&self, i: usize) -> Option<Scores> {
        self.rows.get(i)?.result.as_ref().ok().copied()
    }

    /// Relative change of row `i` against its block's reference.
    pub fn delta(&self, i: usize) -> Option<[f64; 4]> {
        let (a, b) = (self.scores(i)?, self.scores(self.reference(i)?)?);
        Some(std::array::from_fn(|k| relative_change(a.0[k], b.0[k])))
    }

    /// DiffMVR against baseline + dual.
    pub fn gap(&self) -> Option<[f64; 4]> {
        let (a, b) = (self.scores(DIFFMVR)?, self.scores(BASELINE_DUAL)?);
        Some(std::array::from_fn(|k| relative_change(a.0[k], b.0[k])))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,config,guidance,motion_loss,seed,fid_proxy,ssim,tc,fvd_proxy,d_fid_proxy,d_ssim,d_tc,d_fvd_proxy,status\n");
        for (i, r) in self.rows.iter().enumerate() {
            let block = match r.variant.block {
                Block::Loss => "loss",
                Block::Guidance => "guidance",
            };
            let vals = match &r.result {
                Ok(sc) => sc.0.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(","),
                Err(_) => ",,,".into(),
            };
            let deltas = match self.delta(i) {
                Some(d) => d.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(","),
                None => ",,,".into(),
            };
            let status = match &r.result {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("failed: {}", e.replace([',', '\n'], ";")),
            };
            writeln!(
                s,
                "{block},{},{},{},{},{vals},{deltas},{status}",
                r.variant.name,
                r.variant.guidance.name(),
                if r.variant.motion_loss { "on" } else { "off" },
                r.seed
            )
            .expect("string write");
        }
        s
    }

    /// One table row; `reference` rows carry no relative change.
    fn line(&self, s: &mut String, i: usize, label: &str, reference: bool) {
        let r = &self.rows[i];
        write!(s, "{label:<36}").expect("string write");
        match &r.result {
            Ok(sc) => {
                let d = if reference { None } else { self.delta(i) };
                for k in 0..4 {
                    let cell = match d {
                        Some(d) => format!("{:.4} {}", sc.0[k], arrow(d[k])),
                        None => format!("{:.4}", sc.0[k]),
                    };
                    write!(s, " {cell:>18}").expect("string write");
                }
            }
            Err(e) => write!(s, " FAILED: {e}").expect("string write"),
        }
        s.push('\n');
    }

    /// Guidance block, then loss block, with ▲/▼ relative changes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let header = |s: &mut String, title: &str| {
            writeln!(s, "{title}").expect("string write");
            write!(s, "{:<36}", "configuration").expect("string write");
            for c in COLUMNS {
                write!(s, " {c:>18}").expect("string write");
            }
            s.push('\n');
        };
        header(&mut s, "Guidance components (motion loss throughout; change vs DiffMVR)");
        self.line(&mut s, DIFFMVR, "dual guide (DiffMVR)", true);
        for i in (0..self.rows.len()).filter(|&i| self.rows[i].variant.block == Block::Guidance) {
            self.line(&mut s, i, self.rows[i].variant.name, false);
        }
        s.push('\n');
        header(&mut s, "Loss components (change vs baseline)");
        for i in (0..self.rows.len()).filter(|&i| self.rows[i].variant.block == Block::Loss) {
            self.line(&mut s, i, self.rows[i].variant.name, false);
        }
        if let Some(g) = self.gap() {
            write!(s, "{:<36}", "gap vs baseline + dual (%)").expect("string write");
            for d in g {
                write!(s, " {:>18}", format!("{:.2}", 100.0 * d.abs())).expect("string write");
            }
            s.push('\n');
        }
        s
    }
}

/// Worker budget from `DIFFMVR_THREADS` (default 1).
pub fn worker_budget() -> Result<usize> {
    match std::env::var("DIFFMVR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| diffmvr_core::Error::Config(format!("DIFFMVR_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(1),
    }
}

fn run_variant(
    cfg: &RunConfig,
    base: &ModelParams,
    train: &[(String, VideoSequence)],
    test: &[(String, VideoSequence)],
) -> Result<Scores> {
    fs::create_dir_all(&cfg.out)?;
    let mut params = base.clone();
    let data = prepare(cfg, &params, train)?;
    let report = train_prepared(cfg, &mut params, &data, &cfg.out.display().to_string())?;
    fs::write(cfg.out.join("loss.csv"), report.to_csv())?;
    save_checkpoint(&params, &cfg.out.join("model.ckpt"))?;
    let results = inpaint_into(cfg, &params, test, &cfg.out)?;
    let m = score(&params, &results)?;
    fs::write(cfg.out.join("metrics.csv"), m.to_csv())?;
    Ok(Scores([m.frame.fid_proxy, m.frame.ssim_masked, m.frame.tc, m.video.fvd_proxy.unwrap_or(f64::NAN)]))
}

/// Train and score every variant; job `i` uses seed `seed + i` and writes
/// under `<out>/ablation/<slug>`. Failed jobs become marked rows.
pub fn cmd_ablate(cfg: &RunConfig, workers: usize) -> Result<AblationTable> {
    let train = load_split(&cfg.data, "train")?;
    let test = eval_subset(cfg, load_split(&cfg.data, &cfg.split)?);
    let base = vae_params(cfg, &train)?;
    let jobs: Vec<RunConfig> = VARIANTS
        .iter()
        .enumerate()
        .map(|(i, var)| RunConfig {
            guidance: var.guidance,
            motion_loss: var.motion_loss,
            seed: cfg.seed + i as u64,
            out: cfg.out.join("ablation").join(var.slug),
            ..cfg.clone()
        })
        .collect();
    let results: Vec<Mutex<Option<std::result::Result<Scores, String>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = run_variant(&jobs[i], &base, &train, &test).map_err(|e| e.to_string());
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let rows = VARIANTS
        .iter()
        .zip(&jobs)
        .zip(results)
        .map(|((var, job), r)| AblationRow {
            variant: *var,
            seed: job.seed,
            result: r.into_inner().expect("result slot").unwrap_or_else(|| Err("job did not run".into())),
        })
        .collect();
    let table = AblationTable { rows };
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("ablation.csv"), table.to_csv())?;
    fs::write(cfg.out.join("ablation.txt"), table.to_text())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, s: [f64; 4]) -> AblationRow {
        AblationRow { variant: VARIANTS[i], seed: i as u64, result: Ok(Scores(s)) }
    }

    #[test]
    fn seven_rows_cover_both_tables() {
        assert_eq!(VARIANTS.len(), 7);
        assert_eq!(VARIANTS.iter().filter(|v| v.block == Block::Loss).count(), 4);
        assert_eq!((VARIANTS[BASELINE].guidance, VARIANTS[BASELINE].motion_loss), (GuidanceMode::Past, false));
        assert_eq!((VARIANTS[DIFFMVR].guidance, VARIANTS[DIFFMVR].motion_loss), (GuidanceMode::Dual, true));
        assert!(VARIANTS.iter().filter(|v| v.block == Block::Guidance).all(|v| v.motion_loss));
    }

    #[test]
    fn relative_changes_follow_the_reference() {
        // Published DiffMVR-vs-baseline figures: 2.86 → 2.10 is a 26.6 % decrease, 0.68 → 0.91 a 33.8 % increase.
        assert!((relative_change(2.10, 2.86) + 0.2657).abs() < 1e-3);
        assert!((relative_change(0.91, 0.68) - 0.3382).abs() < 1e-3);
        let mut rows: Vec<AblationRow> = (0..7).map(|i| row(i, [1.0 + i as f64; 4])).collect();
        rows[5].result = Err("boom".into());
        let t = AblationTable { rows };
        assert_eq!(t.delta(BASELINE), None);
        assert_eq!(t.delta(DIFFMVR).unwrap()[0], 3.0);
        assert_eq!(t.delta(4).unwrap()[0], relative_change(5.0, 4.0));
        assert_eq!(t.delta(5), None);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 8);
        let text = t.to_text();
        let reference = text.lines().find(|l| l.starts_with("dual guide")).unwrap();
        assert!(!reference.contains(['▲', '▼']), "{reference}");
        assert!(csv.lines().nth(6).unwrap().ends_with("failed: boom"));
        let text = t.to_text();
        assert!(text.contains("FAILED: boom"));
        assert!(text.contains("▲"));
    }
}
