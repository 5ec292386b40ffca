use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use deadleaves::generator::{generate_scene, render_with_stats};
use deadleaves::io::{read_image, read_partition, write_image, write_preview, write_scene};
use deadleaves::observer::{map_partition, posterior_sweep, posterior_top_k_streaming, top_k, write_csv, SweepOptions};
use deadleaves::oracle::{grid_leaf_probability, mc_leaf_probability, mc_partition_prior, OracleReport, RadiusQuadrature};
use deadleaves::partitions::{bell, check_cap, PartitionIter};
use deadleaves::{ColorTextureModel, LikelihoodModel, ObservationWindow, Partition, PixelSet, Point2, PriorEngine, RadiusLaw};
use serde_json::{json, Value};

use crate::args::*;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn emit(out: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn with_config(mut v: Value, config: &Value) -> Value {
    v["config"] = config.clone();
    v
}

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| usage(format!("bad {what} {s:?}")))
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| number(t, what)).collect()
}

fn points(s: &str) -> Result<Vec<Point2>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match numbers(t, "pixel")?.as_slice() {
            [x, y] => Ok(Point2::new(*x, *y)),
            _ => Err(usage(format!("pixel {t:?} must be `x,y`"))),
        })
        .collect()
}

fn pixel_set(p: &PixelArgs) -> Result<Option<PixelSet>> {
    if let Some(g) = &p.grid {
        let (w, h) = g.split_once(['x', 'X']).ok_or_else(|| usage(format!("grid {g:?} must be `WxH`")))?;
        return Ok(Some(PixelSet::grid(number(w, "grid width")?, number(h, "grid height")?)?));
    }
    if let Some(win) = &p.window {
        let parts: Vec<&str> = win.split(',').collect();
        let [x0, y0, w, h] = parts.as_slice() else {
            return Err(usage(format!("window {win:?} must be `x0,y0,w,h`")));
        };
        return Ok(Some(PixelSet::window(number(x0, "x0")?, number(y0, "y0")?, number(w, "width")?, number(h, "height")?)?));
    }
    if let Some(list) = &p.pixels {
        return Ok(Some(PixelSet::new(points(list)?)?));
    }
    Ok(None)
}

fn require_pixels(p: &PixelArgs) -> Result<PixelSet> {
    pixel_set(p)?.ok_or_else(|| usage("one of --grid, --window or --pixels is required"))
}

/// Frame `[0, s]^2` holding every pixel; `s` defaults to the largest coordinate.
fn law_for(l: &LawArgs, a: &PixelSet) -> Result<RadiusLaw> {
    let extent = a.points().iter().fold(0.0f64, |m, p| m.max(p.x).max(p.y));
    let s = l.frame.unwrap_or(extent.ceil());
    if a.points().iter().any(|p| p.x < 0.0 || p.y < 0.0 || p.x > s || p.y > s) {
        return Err(usage(format!("pixels must lie in the frame [0, {s}]^2")));
    }
    Ok(RadiusLaw::new(l.rmin, l.rmax, s)?)
}

/// Pixel set and partition from `--partition` or `--labels`; the pixel set
/// defaults to the pixels of the partition file.
fn partition(p: &PartitionArgs, pixels: Option<PixelSet>) -> Result<(PixelSet, Partition)> {
    if let Some(path) = &p.partition {
        let file = read_partition(path).with_context(|| format!("reading {}", path.display()))?;
        let a = match pixels {
            Some(a) => a,
            None => file.pixels()?,
        };
        let m = file.to_partition(&a)?;
        return Ok((a, m));
    }
    if let Some(labels) = &p.labels {
        let a = pixels.ok_or_else(|| usage("--labels needs --grid, --window or --pixels"))?;
        let chars: Vec<char> = labels.chars().collect();
        if chars.len() != a.len() {
            return Err(usage(format!("{} labels for {} pixels", chars.len(), a.len())));
        }
        let mut keys = chars.clone();
        keys.sort_unstable();
        keys.dedup();
        let blocks = keys
            .iter()
            .map(|k| chars.iter().enumerate().filter(|(_, c)| *c == k).fold(0u64, |m, (i, _)| m | 1 << i))
            .collect();
        return Ok((a.clone(), Partition::new(a.len(), blocks)?));
    }
    Err(usage("one of --partition or --labels is required"))
}

fn split_kind<'a>(s: &'a str, what: &str) -> Result<(&'a str, Vec<&'a str>)> {
    let mut it = s.split(':');
    let kind = it.next().unwrap_or("");
    let rest: Vec<&str> = it.collect();
    if kind.is_empty() {
        return Err(usage(format!("empty {what} value")));
    }
    Ok((kind, rest))
}

fn broadcast(v: Vec<f64>, ch: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; ch]),
        n if n == ch => Ok(v),
        n => Err(usage(format!("{what} has {n} values for {ch} channels"))),
    }
}

/// Colour/texture model from `--color` and `--texture`; `channels` applies
/// unless a Gaussian mean lists one value per channel.
fn color_model(color: &str, texture: &str, channels: Option<usize>) -> Result<ColorTextureModel> {
    let (ck, cargs) = split_kind(color, "colour")?;
    let (tk, targs) = split_kind(texture, "texture")?;
    let model = match (ck, cargs.as_slice(), tk, targs.as_slice()) {
        ("gaussian", [mu, sc], "gaussian", [st]) => {
            let mu = numbers(mu, "colour mean")?;
            let ch = channels.unwrap_or(mu.len());
            ColorTextureModel::Gaussian {
                mu_c: broadcast(mu, ch, "colour mean")?,
                sigma_c: broadcast(numbers(sc, "colour sigma")?, ch, "colour sigma")?,
                sigma_t: broadcast(numbers(st, "texture sigma")?, ch, "texture sigma")?,
            }
        }
        ("uniform", [levels], "uniform", [hw]) => ColorTextureModel::UniformDiscrete {
            channels: channels.unwrap_or(1),
            color_levels: number(levels, "colour levels")?,
            texture_halfwidth: number(hw, "texture halfwidth")?,
        },
        _ => {
            return Err(usage(format!(
                "--color {color:?} and --texture {texture:?} must both be `gaussian:MU:SIGMA`/`gaussian:SIGMA` or `uniform:LEVELS`/`uniform:HALFWIDTH`"
            )))
        }
    };
    model.validate()?;
    Ok(model)
}

fn likelihood_model(m: &ModelArgs, channels: usize) -> Result<LikelihoodModel> {
    let (kind, rest) = split_kind(&m.likelihood, "likelihood")?;
    match (kind, rest.as_slice()) {
        ("uniform", [t]) => Ok(LikelihoodModel::TextureOnly { channels, texture_levels: number(t, "texture levels")? }),
        ("model", []) | ("gaussian", []) | ("uniform", []) => {
            let model = color_model(&m.color, &m.texture, Some(channels))?;
            let matches = match &model {
                ColorTextureModel::Gaussian { .. } => kind != "uniform",
                ColorTextureModel::UniformDiscrete { .. } => kind != "gaussian",
            };
            if !matches {
                return Err(usage(format!("--likelihood {kind} does not match --color {:?}", m.color)));
            }
            Ok(model.into())
        }
        _ => Err(usage(format!("bad likelihood {:?}; use model, gaussian, uniform or uniform:T", m.likelihood))),
    }
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn subset_mask(s: &str, a: &PixelSet) -> Result<u64> {
    let v = if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map_err(|_| usage(format!("bad subset mask {s:?}")))?
    } else {
        a.mask_of(&points(s)?)?
    };
    if v == 0 || v & !a.full_mask() != 0 {
        return Err(usage(format!("subset {s:?} is empty or outside the pixel set")));
    }
    Ok(v)
}

pub fn generate(g: &GenerateArgs, config: &Value) -> Result<()> {
    if g.size == 0 {
        return Err(usage("--size must be positive"));
    }
    let law = RadiusLaw::new(g.rmin, g.rmax, g.size as f64)?;
    let model = color_model(&g.color, &g.texture, Some(g.channels))?;
    let scene = generate_scene(&law, g.seed)?;
    let render = render_with_stats(&scene, &model, g.seed)?;
    write_scene(&g.scene, &scene, Some(config)).with_context(|| format!("writing {}", g.scene.display()))?;
    write_image(&g.image, &render.image).with_context(|| format!("writing {}", g.image.display()))?;
    if let Some(p) = &g.preview {
        write_preview(p, &render.image).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(
        None,
        &json!({
            "config": config,
            "side": scene.side,
            "leaves": scene.leaves.len(),
            "clamped": render.clamped,
            "scene": g.scene,
            "image": g.image,
            "preview": g.preview,
        }),
    )
}

fn prior_all(p: &PriorArgs, a: PixelSet, law: RadiusLaw, config: &Value) -> Result<Value> {
    // Log-likelihood zero everywhere: the posterior is the prior.
    let n = a.len();
    let w = ObservationWindow::new(a, 1, vec![0.0; n])?;
    let flat = LikelihoodModel::TextureOnly { channels: 1, texture_levels: 1 };
    let sweep = posterior_sweep(&w, &law, &flat, &SweepOptions { cap: p.cap, memo: true })?;
    let count = sweep.records.len();
    let keep = p.top.unwrap_or(count);
    let records = sweep.records[..keep.min(count)]
        .iter()
        .map(|r| {
            Ok(json!({
                "partition": r.partition.label_string(),
                "blocks": r.partition.to_coords(&w.pixels)?,
                "prior": r.log_prior.exp(),
                "log_prior": finite(r.log_prior),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = sweep.records.iter().map(|r| r.log_prior.exp()).sum();
    Ok(json!({"config": config, "pixels": n, "count": count, "total": total, "records": records}))
}

pub fn prior(p: &PriorArgs, config: &Value) -> Result<()> {
    let pixels = pixel_set(&p.pixels)?;
    let (a, m) = if p.all {
        (pixels.ok_or_else(|| usage("--all needs --grid, --window or --pixels"))?, None)
    } else {
        let (a, m) = partition(&p.partition, pixels)?;
        (a, Some(m))
    };
    let law = law_for(&p.law, &a)?;
    if let Some(path) = &p.tables {
        let engine = PriorEngine::new(a.clone(), law)?;
        let t = engine.table(a.full_mask())?;
        let out = json!({
            "config": config,
            "residual": format!("{:#x}", t.residual()),
            "scale": law.scale(),
            "nonempty_mass": t.nonempty_mass,
            "masses": t.to_hex_map(),
        });
        emit(Some(path), &out)?;
    }
    let Some(m) = m else {
        return emit(p.out.as_deref(), &prior_all(p, a, law, config)?);
    };
    let engine = PriorEngine::new(a.clone(), law)?;
    let ordered = engine.prior_ordered(&m)?;
    let unordered = engine.prior_unordered(&m)?;
    let out = json!({
        "config": config,
        "pixels": a.len(),
        "partition": m.label_string(),
        "blocks": m.to_coords(&a)?,
        "layer_ratios": engine.layer_ratios(&m)?,
        "ordered": {"value": ordered.value, "log_value": finite(ordered.log_value)},
        "unordered": {"value": unordered.value, "log_value": finite(unordered.log_value)},
    });
    emit(p.out.as_deref(), &out)
}

fn window(image: &Path, pixels: &PixelArgs) -> Result<ObservationWindow> {
    let img = read_image(image).with_context(|| format!("reading {}", image.display()))?;
    let a = match pixel_set(pixels)? {
        Some(a) => a,
        None => PixelSet::grid(img.side, img.side)?,
    };
    Ok(ObservationWindow::from_image(&img, a)?)
}

pub fn likelihood(l: &LikelihoodArgs, config: &Value) -> Result<()> {
    let img = read_image(&l.image).with_context(|| format!("reading {}", l.image.display()))?;
    let (a, m) = partition(&l.partition, pixel_set(&l.pixels)?)?;
    let w = ObservationWindow::from_image(&img, a)?;
    let model = likelihood_model(&l.model, w.channels)?;
    let res = deadleaves::likelihood::log_likelihood(&w, &m, &model)?;
    let out = json!({
        "config": config,
        "partition": m.label_string(),
        "blocks": m.to_coords(&w.pixels)?,
        "per_block": res.per_block.iter().map(|&x| finite(x)).collect::<Vec<_>>(),
        "total": finite(res.total),
    });
    emit(l.out.as_deref(), &out)
}

pub fn observe(o: &ObserveArgs, config: &Value) -> Result<()> {
    if o.top == 0 {
        return Err(usage("--top must be at least 1"));
    }
    let w = window(&o.image, &o.pixels)?;
    check_cap(w.pixels.len(), o.cap)?;
    let law = law_for(&o.law, &w.pixels)?;
    let model = likelihood_model(&o.model, w.channels)?;
    let opts = SweepOptions { cap: o.cap, memo: !o.no_memo };
    let (records, top, log_evidence, count, tie) = if o.stream {
        let s = posterior_top_k_streaming(&w, &law, &model, o.top, &opts)?;
        (s.top.clone(), s.top, s.log_evidence, s.count, s.map_tie)
    } else {
        let s = posterior_sweep(&w, &law, &model, &opts)?;
        let tie = map_partition(&s.records)?.tie;
        let top = top_k(&s.records, o.top)?;
        let count = s.records.len() as u64;
        (s.records, top, s.log_evidence, count, tie)
    };
    let map = top.first().cloned().ok_or_else(|| anyhow::anyhow!("no partitions scored"))?;

    fs::create_dir_all(&o.out_dir).with_context(|| format!("creating {}", o.out_dir.display()))?;
    let jsonl: PathBuf = o.out_dir.join("records.jsonl");
    let csv: PathBuf = o.out_dir.join("top.csv");
    let mut f = BufWriter::new(fs::File::create(&jsonl).with_context(|| format!("writing {}", jsonl.display()))?);
    serde_json::to_writer(&mut f, &json!({"config": config, "count": count, "log_evidence": log_evidence, "records": records.len()}))?;
    f.write_all(b"\n")?;
    deadleaves::observer::write_jsonl(&mut f, &records, &w)?;
    f.flush()?;
    let mut c = BufWriter::new(fs::File::create(&csv).with_context(|| format!("writing {}", csv.display()))?);
    writeln!(c, "# config {}", serde_json::to_string(config)?)?;
    write_csv(&mut c, &top)?;
    c.flush()?;

    let out = json!({
        "config": config,
        "pixels": w.pixels.len(),
        "count": count,
        "log_evidence": log_evidence,
        "map": map.to_json(&w)?,
        "tie": tie,
        "top": top.iter().map(|r| r.to_json(&w)).collect::<deadleaves::Result<Vec<_>>>()?,
        "files": {"jsonl": jsonl, "csv": csv},
    });
    emit(None, &out)
}

/// Report plus `relative_error = (value - analytic) / analytic` (null for a zero analytic value).
fn report(r: OracleReport, config: &Value, out: Option<&Path>) -> Result<()> {
    let rel = if r.analytic != 0.0 { finite((r.value - r.analytic) / r.analytic) } else { Value::Null };
    let mut v = with_config(serde_json::to_value(r)?, config);
    v["relative_error"] = rel;
    emit(out, &v)
}

pub fn oracle(cmd: &OracleCommand, config: &Value) -> Result<()> {
    match cmd {
        OracleCommand::McLeaf(o) => {
            let a = require_pixels(&o.pixels)?;
            let law = law_for(&o.law, &a)?;
            let v = subset_mask(&o.subset, &a)?;
            let analytic = PriorEngine::new(a.clone(), law)?.table(a.full_mask())?.mass(v) * law.scale();
            let est = mc_leaf_probability(&a, v, &law, o.samples, o.seed)?;
            report(OracleReport::new(est, format!("leaf {v:#x}"), analytic), config, o.out.as_deref())
        }
        OracleCommand::GridLeaf(o) => {
            let a = require_pixels(&o.pixels)?;
            let law = law_for(&o.law, &a)?;
            let v = subset_mask(&o.subset, &a)?;
            let analytic = PriorEngine::new(a.clone(), law)?.table(a.full_mask())?.mass(v) * law.scale();
            let radius = o.radius_cells.map_or(RadiusQuadrature::Exact, RadiusQuadrature::Geometric);
            let est = grid_leaf_probability(&a, v, &law, o.resolution, radius)?;
            report(OracleReport::new(est, format!("leaf {v:#x}"), analytic), config, o.out.as_deref())
        }
        OracleCommand::McPrior(o) => {
            let (a, m) = partition(&o.partition, pixel_set(&o.pixels)?)?;
            let law = law_for(&o.law, &a)?;
            let analytic = PriorEngine::new(a.clone(), law)?.prior_unordered(&m)?.value;
            let est = mc_partition_prior(&a, &m, &law, o.samples, o.seed)?;
            report(OracleReport::new(est, format!("prior {}", m.label_string()), analytic), config, o.out.as_deref())
        }
    }
}

/// Largest `n` whose Bell number fits in `u128`.
const BELL_MAX: usize = 42;

pub fn partitions(p: &PartitionsArgs, config: &Value) -> Result<()> {
    match (p.count, p.list) {
        (Some(n), None) => {
            if n > BELL_MAX {
                return Err(usage(format!("--count is limited to {BELL_MAX}")));
            }
            emit(None, &json!({"config": config, "n": n, "count": bell(n)}))
        }
        (None, Some(n)) => {
            check_cap(n, p.cap)?;
            let mut out = BufWriter::new(std::io::stdout().lock());
            for m in PartitionIter::new(n) {
                writeln!(out, "{}", m.label_string())?;
            }
            out.flush()?;
            Ok(())
        }
        _ => Err(usage("one of --count or --list is required")),
    }
}
