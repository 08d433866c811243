//! One function per subcommand. Each returns a short summary for standard
//! output; progress goes through `log`.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use misr_core::assembly::{select_clearest, Provenance};
use misr_core::layout::{assemble_root, write_member, Manifest, MemberStatus, SplitSide};
use misr_core::metric::{baseline_score, cpsnr};
use misr_core::neuralnet::train::{infer, train};
use misr_core::neuralnet::{load_params, save_params, NetworkParams, INPUT_FRAMES};
use misr_core::resample::bicubic_upscale_x3;
use misr_core::simgen::{gen_dataset, SimConfig};
use misr_core::{DataMember, Image, Plane};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_at, CliError};
use crate::report::{write_csv, MemberScore, ScoreReport};

/// Marks a data root as written by `simulate` and safe to regenerate.
const SIM_MARKER: &str = ".misr-simulated";

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_at(path))
}

pub fn simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let sim = &cfg.simulate;
    if sim.members == 0 {
        return Err(CliError::Config("simulate.members must be at least 1".into()));
    }
    let root = cfg.data_root();
    if root.exists() {
        let occupied = fs::read_dir(&root).map_err(io_at(&root))?.next().is_some();
        if occupied && !root.join(SIM_MARKER).is_file() {
            return Err(CliError::Config(format!(
                "{} is not empty and was not written by simulate",
                root.display()
            )));
        }
        for band in misr_core::Band::ALL {
            let dir = root.join(band.as_str());
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
            }
        }
    }
    ensure_dir(&root)?;
    fs::write(root.join(SIM_MARKER), b"").map_err(io_at(root.join(SIM_MARKER)))?;

    let sim_cfg = SimConfig {
        n_lr: (sim.n_lr_min, sim.n_lr_max),
        params: sim.params,
    };
    info!("generating {} members with seed {}", sim.members, sim.seed);
    let ds = gen_dataset(sim.seed, sim.members, &sim_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    for m in &ds.members {
        write_member(&root, m)?;
    }
    let manifest = assemble_root(
        &root,
        &cfg.assembly.rules()?,
        cfg.assembly.input_count,
        &cfg.assembly.exclude,
        Provenance::Synthetic { seed: sim.seed },
    )?;
    ensure_dir(&cfg.output_dir)?;
    manifest.save(&cfg.manifest_path())?;
    Ok(format!(
        "simulated {} members into {}",
        ds.members.len(),
        root.display()
    ))
}

pub fn assemble(cfg: &RunConfig) -> Result<String, CliError> {
    let root = cfg.data_root();
    let manifest = assemble_root(
        &root,
        &cfg.assembly.rules()?,
        cfg.assembly.input_count,
        &cfg.assembly.exclude,
        Provenance::Ingested { root: root.clone() },
    )?;
    ensure_dir(&cfg.output_dir)?;
    manifest.save(&cfg.manifest_path())?;
    let count = |s: MemberStatus| manifest.members.iter().filter(|m| m.status == s).count();
    for m in manifest.members.iter().filter(|m| m.status == MemberStatus::Rejected) {
        let rules: Vec<String> = m.rejection.iter().map(|r| r.to_string()).collect();
        info!("rejected {}: {}", m.key, rules.join(", "));
    }
    Ok(format!(
        "admitted {}, rejected {}, excluded {}",
        count(MemberStatus::Admitted),
        count(MemberStatus::Rejected),
        count(MemberStatus::Excluded)
    ))
}

pub fn split(cfg: &RunConfig) -> Result<String, CliError> {
    let path = cfg.manifest_path();
    let mut manifest = Manifest::load(&path)?;
    manifest.apply_split(&cfg.split.config())?;
    manifest.save(&path)?;
    Ok(format!(
        "train {}, test {}",
        manifest.on_side(SplitSide::Train).count(),
        manifest.on_side(SplitSide::Test).count()
    ))
}

fn load_side(manifest: &Manifest, side: SplitSide) -> Result<Vec<DataMember>, CliError> {
    if manifest.split.is_none() {
        return Err(CliError::Usage("the manifest has no split; run `split` first".into()));
    }
    manifest
        .on_side(side)
        .map(|r| manifest.load_member(r).map_err(CliError::from))
        .collect()
}

fn check_inputs(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.assembly.input_count != INPUT_FRAMES {
        return Err(CliError::Config(format!(
            "the network takes {INPUT_FRAMES} LR frames, assembly.input_count is {}",
            cfg.assembly.input_count
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineRow<'a> {
    member: String,
    band: &'a str,
    cpsnr_bicubic: f64,
}

pub fn baseline(cfg: &RunConfig) -> Result<String, CliError> {
    let manifest = Manifest::load(&cfg.manifest_path())?;
    let members = load_side(&manifest, SplitSide::Test)?;
    if members.is_empty() {
        return Err(CliError::Data("the test side is empty".into()));
    }
    let mut rows = Vec::with_capacity(members.len());
    for m in &members {
        rows.push(BaselineRow {
            member: m.key(),
            band: m.band().as_str(),
            cpsnr_bicubic: baseline_score(m).map_err(CliError::data)?,
        });
    }
    ensure_dir(&cfg.output_dir)?;
    write_csv(&cfg.output_dir.join("baseline.csv"), &rows)?;
    let mean = rows.iter().map(|r| r.cpsnr_bicubic).sum::<f64>() / rows.len() as f64;
    Ok(format!("bicubic baseline over {} test members: {mean:.4} dB", rows.len()))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    check_inputs(cfg)?;
    let manifest = Manifest::load(&cfg.manifest_path())?;
    let train_set = load_side(&manifest, SplitSide::Train)?;
    let val_set = load_side(&manifest, SplitSide::Test)?;
    info!(
        "training on {} members for {} epochs",
        train_set.len(),
        cfg.train.epochs
    );
    let outcome = train(&train_set, &val_set, &cfg.train)?;
    ensure_dir(&cfg.output_dir)?;
    save_params(cfg.params_path(), &outcome.params)?;
    write_csv(&cfg.history_path(), &outcome.history)?;
    let last = outcome.history.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs, final loss {:.6e}{}",
        outcome.history.len(),
        last.train_loss,
        last.val_cpsnr
            .map_or(String::new(), |v| format!(", held-out cPSNR {v:.4} dB"))
    ))
}

fn load_trained(cfg: &RunConfig) -> Result<NetworkParams<f32>, CliError> {
    let path = cfg.params_path();
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "no trained parameters at {}; run `train` first",
            path.display()
        )));
    }
    Ok(load_params(&path)?)
}

fn sr_path(cfg: &RunConfig, m: &DataMember) -> PathBuf {
    cfg.output_dir
        .join("sr")
        .join(m.band().as_str())
        .join(m.tile_id())
        .join("SR.png")
}

pub fn infer_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    check_inputs(cfg)?;
    let params = load_trained(cfg)?;
    let manifest = Manifest::load(&cfg.manifest_path())?;
    let members = load_side(&manifest, SplitSide::Test)?;
    for m in &members {
        let sr = infer(&params, m)?;
        let path = sr_path(cfg, m);
        ensure_dir(path.parent().expect("has parent"))?;
        sr.save(&path).map_err(CliError::data)?;
    }
    Ok(format!(
        "wrote {} super-resolved images under {}",
        members.len(),
        cfg.output_dir.join("sr").display()
    ))
}

/// `LR bicubic | SR | HR` side by side.
fn side_by_side(m: &DataMember, sr: &Image) -> Result<Image, CliError> {
    let clearest = select_clearest(m, 1).map_err(CliError::data)?[0];
    let bicubic = bicubic_upscale_x3(&m.lrs()[clearest].image).map_err(CliError::data)?;
    let panels = [bicubic.plane(), sr.plane(), m.hr().plane()];
    let (w, h) = m.hr().dims();
    let strip = Plane::from_fn(3 * w, h, |x, y| panels[x / w].get(x % w, y));
    Ok(strip.clamp_to_image())
}

pub fn evaluate(cfg: &RunConfig) -> Result<String, CliError> {
    check_inputs(cfg)?;
    let params = load_trained(cfg)?;
    let manifest = Manifest::load(&cfg.manifest_path())?;
    let members = load_side(&manifest, SplitSide::Test)?;
    if members.is_empty() {
        return Err(CliError::Data("the test side is empty".into()));
    }
    let mut rows = Vec::with_capacity(members.len());
    let mut outputs = Vec::with_capacity(members.len());
    for m in &members {
        let sr = infer(&params, m)?;
        let network = cpsnr(m.hr(), m.hr_mask(), &sr).map_err(CliError::data)?.cpsnr;
        let bicubic = baseline_score(m).map_err(CliError::data)?;
        rows.push(MemberScore::new(m.key(), m.band(), bicubic, network));
        outputs.push(sr);
    }
    let report = ScoreReport::from_rows(rows);
    ensure_dir(&cfg.output_dir)?;
    report.write_rows_csv(&cfg.output_dir.join("scores.csv"))?;
    report.write_summary_csv(&cfg.output_dir.join("report.csv"))?;
    report.write_json(&cfg.output_dir.join("report.json"))?;

    if cfg.evaluate.dump_images && cfg.evaluate.dump_count > 0 {
        let dumps = cfg.output_dir.join("dumps");
        ensure_dir(&dumps)?;
        let mut order: Vec<usize> = (0..members.len()).collect();
        // best first; the sort is stable so equal scores keep manifest order
        order.sort_by(|&a, &b| {
            report.rows[b]
                .cpsnr_network
                .total_cmp(&report.rows[a].cpsnr_network)
        });
        let n = cfg.evaluate.dump_count.min(order.len());
        let picks = order[..n]
            .iter()
            .enumerate()
            .map(|(rank, &i)| ("best", rank + 1, i))
            .chain(order.iter().rev().take(n).enumerate().map(|(rank, &i)| ("worst", rank + 1, i)));
        for (tag, rank, i) in picks {
            let m = &members[i];
            let name = format!("{tag}{rank}_{}_{}.png", m.band(), m.tile_id());
            let path = dumps.join(name);
            side_by_side(m, &outputs[i])?.save(&path).map_err(CliError::data)?;
        }
    }

    let all = report.overall();
    if all.n_network_wins * 2 < all.n_images {
        warn!("the network wins on fewer than half of the test members");
    }
    Ok(format!(
        "bicubic {:.4} dB, network {:.4} dB, network better on {}/{}",
        all.avg_cpsnr_bicubic, all.avg_cpsnr_network, all.n_network_wins, all.n_images
    ))
}
