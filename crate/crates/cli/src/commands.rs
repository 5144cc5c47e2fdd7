//! Subcommand bodies. Each returns the text printed to stdout; files go
//! to the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tdpp_core::attacks::{
    dnc_config1, dnc_config2, effectiveness, layer_significance, partial_row_permutation_study, small_matrix_leakage,
    EvalSet,
};
use tdpp_core::format::{read_dataset, read_mapping, read_model, write_dataset, write_mapping, write_model};
use tdpp_core::overhead::{compare, Metric};
use tdpp_core::zoo::{generate_dataset, train};
use tdpp_core::{
    adversary_extract, brute_force_model, build_schedule, extract_with_key, protect_model, reduction_ratio,
    restore_index_vectors, switch_count, Arch, KeySchedule, ModelDescriptor, PermutationModule, QuantModel,
    SystemConfig, UserKey,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.tdpd";
pub const MODEL_FILE: &str = "model.tdpq";
pub const MAPPING_FILE: &str = "mapping.tdpm";
pub const ARCHITECTURE_FILE: &str = "architecture.tdpq";
pub const EXTRACTED_FILE: &str = "extracted.tdpq";
pub const RECOVERED_FILE: &str = "recovered.tdpq";

pub struct Context {
    pub cfg: ExperimentConfig,
    pub user: Option<UserKey>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, user_key_hex: Option<&str>) -> Result<Self, CliError> {
        cfg.validate()?;
        let user = user_key_hex
            .map(|h| UserKey::from_hex(h).map_err(|e| CliError::Config(format!("--user-key: {e}"))))
            .transpose()?;
        Ok(Self { cfg, user })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn input(&self, given: Option<&Path>, default: &str) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.out(default))
    }

    fn system(&self) -> SystemConfig {
        self.cfg.system()
    }

    /// `# tdpp <version> config=<sha256> seed=<seed>`
    pub fn header(&self) -> String {
        format!(
            "# tdpp {} config={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.cfg.hash(),
            self.cfg.seed
        )
    }

    fn header_json(&self) -> Value {
        json!({
            "tool": "tdpp",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.cfg.out)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", self.cfg.out.display())))?;
        let path = self.out(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, format!("{}\n{body}", self.header()).as_bytes())
    }

    fn write_json(&self, name: &str, body: Value) -> Result<PathBuf, CliError> {
        let mut doc = json!({ "header": self.header_json() });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn schedule(&self, desc: &ModelDescriptor) -> Result<KeySchedule, CliError> {
        let sys = self.system();
        Ok(build_schedule(&sys, desc, sys.seed, self.user.as_ref())?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<QuantModel, CliError> {
    read_model(&read(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

#[derive(Debug, Clone, Serialize)]
pub struct KeySummary {
    pub arch: Arch,
    pub crossbar_size: usize,
    pub bn_ports: usize,
    pub blocks: usize,
    pub key_bits_per_pm: usize,
    pub keys: usize,
    pub key_storage_bits: usize,
}

fn key_summary(sys: &SystemConfig, layers: usize) -> Result<KeySummary, CliError> {
    let pm = PermutationModule::new(sys.crossbar_size, sys.bn_ports)?;
    let keys = match sys.arch {
        Arch::Config1 => 1,
        Arch::Config2 => layers,
    };
    Ok(KeySummary {
        arch: sys.arch,
        crossbar_size: sys.crossbar_size,
        bn_ports: sys.bn_ports,
        blocks: pm.blocks(),
        key_bits_per_pm: pm.key_len(),
        keys,
        key_storage_bits: keys * pm.key_len(),
    })
}

fn key_lines(k: &KeySummary) -> String {
    format!(
        "arch: {}\npermutation module: {} blocks of {} ports\nkey bits per PM: {}\nkeys: {}\nkey storage bits: {}\n",
        k.arch, k.blocks, k.bn_ports, k.key_bits_per_pm, k.keys, k.key_storage_bits
    )
}

pub fn prepare(ctx: &Context) -> Result<String, CliError> {
    let z = &ctx.cfg.zoo;
    let desc = ctx.cfg.descriptor()?;
    let ds = generate_dataset(ctx.cfg.seed, z.n_train, z.n_test)?;
    let trained = train(&ds, &desc, z.epochs, ctx.cfg.seed)?;
    ctx.write(DATASET_FILE, &write_dataset(&ds)?)?;
    ctx.write(MODEL_FILE, &write_model(&trained.quant)?)?;
    let shapes: Vec<String> = desc.layers.iter().map(|l| format!("{}x{}", l.m, l.n)).collect();
    let text = format!(
        "{}\nmodel: {} [{}]\ntrain samples: {}\ntest samples: {}\nfloat accuracy: {:.4}\nquantized accuracy: {:.4}\ndataset: {}\nweights: {}\n",
        ctx.header(),
        z.model,
        shapes.join(", "),
        z.n_train,
        z.n_test,
        trained.float_accuracy,
        trained.quant_accuracy,
        DATASET_FILE,
        MODEL_FILE
    );
    ctx.write("prepare.txt", text.as_bytes())?;
    Ok(text)
}

pub fn protect(ctx: &Context, model_path: Option<&Path>) -> Result<String, CliError> {
    let model = load_model(&ctx.input(model_path, MODEL_FILE))?;
    let sys = ctx.system();
    let desc = model.descriptor();
    let mut sched = ctx.schedule(&desc)?;
    let mapping = protect_model(&model, &sys, &mut sched)?;
    ctx.write(MAPPING_FILE, &write_mapping(&mapping)?)?;
    let architecture = QuantModel::new(mapping.architecture.clone())?;
    ctx.write(ARCHITECTURE_FILE, &write_model(&architecture)?)?;

    let keys = key_summary(&sys, desc.len())?;
    debug_assert_eq!(keys.keys, sched.distinct_keys());
    let layers: Vec<Value> = mapping
        .layers
        .iter()
        .zip(&desc.layers)
        .map(|(l, s)| {
            json!({
                "layer": l.layer,
                "m": s.m,
                "n": s.n,
                "grid_rows": l.grid_rows,
                "grid_cols": l.grid_cols,
                "tiles": l.tiles.len(),
                "index_vector_bits": l.tiles.len() * 2 * sys.crossbar_size,
            })
        })
        .collect();
    ctx.write_json(
        "protect.json",
        json!({
            "keys": to_value(&keys),
            "device_precision": sys.device_precision,
            "slices": sys.slices(),
            "layers": layers,
        }),
    )?;
    Ok(format!(
        "{}\n{}tiles: {}\nmapping: {}\n",
        ctx.header(),
        key_lines(&keys),
        mapping.layers.iter().map(|l| l.tiles.len()).sum::<usize>(),
        ctx.out(MAPPING_FILE).display()
    ))
}

pub fn extract(
    ctx: &Context,
    mapping_path: Option<&Path>,
    architecture_path: Option<&Path>,
    with_key: bool,
) -> Result<String, CliError> {
    let architecture = load_model(&ctx.input(architecture_path, ARCHITECTURE_FILE))?;
    let mpath = ctx.input(mapping_path, MAPPING_FILE);
    let mapping =
        read_mapping(&read(&mpath)?, &architecture).map_err(|e| CliError::Io(format!("{}: {e}", mpath.display())))?;
    let (model, name) = if with_key {
        let sys = ctx.system();
        if mapping.crossbar_size != sys.crossbar_size || mapping.device_precision != sys.device_precision {
            return Err(CliError::Config(format!(
                "system: mapping was made with crossbar_size={} device_precision={}",
                mapping.crossbar_size, mapping.device_precision
            )));
        }
        let desc = architecture.descriptor();
        let mut sched = ctx.schedule(&desc)?;
        restore_index_vectors(&mut sched, &desc)?;
        (extract_with_key(&mapping, &sched)?, RECOVERED_FILE)
    } else {
        (adversary_extract(&mapping)?, EXTRACTED_FILE)
    };
    let path = ctx.write(name, &write_model(&model)?)?;
    Ok(format!("{}\nwrote {}\n", ctx.header(), path.display()))
}

pub fn attack(
    ctx: &Context,
    mapping_path: Option<&Path>,
    model_path: Option<&Path>,
    dataset_path: Option<&Path>,
) -> Result<String, CliError> {
    let a = &ctx.cfg.attack;
    let sys = ctx.system();
    let model = load_model(&ctx.input(model_path, MODEL_FILE))?;
    let dpath = ctx.input(dataset_path, DATASET_FILE);
    let ds = read_dataset(&read(&dpath)?).map_err(|e| CliError::Io(format!("{}: {e}", dpath.display())))?;
    let mpath = ctx.input(mapping_path, MAPPING_FILE);
    let mapping =
        read_mapping(&read(&mpath)?, &model).map_err(|e| CliError::Io(format!("{}: {e}", mpath.display())))?;
    let k = a.eval_samples.min(ds.test_x.len());
    let eval = EvalSet::new(&ds.test_x[..k], &ds.test_y[..k])?;
    let desc = model.descriptor();

    let eff = effectiveness(&model, &sys, eval, a.trials)?;
    let mut eff_csv = String::from("trial,accuracy\n");
    for (t, acc) in eff.trial_accuracy.iter().enumerate() {
        eff_csv.push_str(&format!("{t},{acc:.6}\n"));
    }
    ctx.write_csv("effectiveness.csv", &eff_csv)?;

    let sec = brute_force_model(&desc, &sys)?;
    ctx.write_json("security.json", to_value(&sec))?;

    let stored = adversary_extract(&mapping)?;
    let sched = ctx.schedule(&desc)?;
    let pm = sched.pm();
    let mut significance = None;
    let dnc = if a.dnc {
        let r = match sys.arch {
            Arch::Config1 => dnc_config1(&stored, sched.key(0), &pm, eval, sec.model, a.trials, ctx.cfg.seed)?,
            Arch::Config2 => {
                let sig = layer_significance(&model, &pm, eval, a.trials, ctx.cfg.seed)?;
                let keys: Vec<_> = (0..sched.layers()).map(|i| sched.key(i).clone()).collect();
                let r = dnc_config2(
                    &stored,
                    &keys,
                    &pm,
                    &sig.order,
                    eval,
                    &sec.per_layer,
                    a.trials,
                    ctx.cfg.seed,
                )?;
                significance = Some(sig);
                r
            }
        };
        ctx.write_csv("dnc.csv", &r.to_csv())?;
        Some(r)
    } else {
        None
    };

    let layer = a.partial_row_layer;
    let m = desc.layers[layer].m;
    let counts = [0, m / 3, 2 * m / 3, m];
    let partial = partial_row_permutation_study(&model, layer, &counts, eval, a.trials, ctx.cfg.seed)?;
    let mut pr_csv = String::from("rows,fraction,accuracy\n");
    for (i, (&rows, acc)) in counts.iter().zip(&partial).enumerate() {
        pr_csv.push_str(&format!("{rows},{i}/3,{acc:.6}\n"));
    }
    ctx.write_csv("partial_rows.csv", &pr_csv)?;

    ctx.write_json(
        "attack.json",
        json!({
            "effectiveness": to_value(&eff),
            "security": to_value(&sec),
            "significance": to_value(&significance),
            "dnc": to_value(&dnc),
            "partial_rows": { "layer": layer, "rows": counts, "accuracy": partial },
        }),
    )?;

    let mut text =
        format!(
        "{}\nclean accuracy: {:.4}\nextracted accuracy (mean of {}): {:.4}\nbrute force log2: {:.1} (per layer {:?})\n",
        ctx.header(),
        eff.clean_accuracy,
        a.trials,
        eff.mean_accuracy,
        sec.model,
        sec.per_layer.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
    );
    if let Some(r) = &dnc {
        match r.ratio() {
            Some(ratio) => text.push_str(&format!(
                "dnc: sensitive at r={ratio:.2}, effort log2 {:.1}\n",
                r.effort_log2
            )),
            None if sys.arch == Arch::Config2 => text.push_str(&format!(
                "dnc: layers {:?} needed, effort log2 {:.1}\n",
                r.list2, r.effort_log2
            )),
            None => text.push_str("dnc: never sensitive\n"),
        }
    }
    text.push_str(&format!("partial rows {counts:?}: {partial:.4?}\n"));
    Ok(text)
}

pub fn overhead(ctx: &Context) -> Result<String, CliError> {
    let report = compare(&ctx.cfg.overhead, &ctx.cfg.costs)?;
    let area = report.to_csv(Metric::Area);
    ctx.write_csv("overhead_area.csv", &area)?;
    ctx.write_csv("overhead_power.csv", &report.to_csv(Metric::Power))?;
    Ok(format!("{}\n{area}", ctx.header()))
}

pub fn report(ctx: &Context) -> Result<String, CliError> {
    let sys = ctx.system();
    let desc = ctx.cfg.descriptor()?;
    let keys = key_summary(&sys, desc.len())?;
    let sec = brute_force_model(&desc, &sys)?;
    let counts: Vec<(usize, usize)> = (1..=8)
        .map(|b| (1usize << b, switch_count(1 << b).expect("power of two")))
        .collect();
    let reduction = reduction_ratio(sys.crossbar_size, sys.bn_ports)?;
    let leak = small_matrix_leakage(2, 4)?;
    let mut text = format!("{}\n{}", ctx.header(), key_lines(&keys));
    text.push_str(&format!(
        "switch reduction vs one {}-port network: {:.2}%\n",
        sys.crossbar_size,
        reduction * 100.0
    ));
    text.push_str("switches per Benes network:\n");
    for (p, s) in &counts {
        text.push_str(&format!("  {p} ports: {s}\n"));
    }
    text.push_str(&format!(
        "brute force log2: model {:.1}, per layer {:?}\n",
        sec.model,
        sec.per_layer
            .iter()
            .map(|v| (v * 10.0).round() / 10.0)
            .collect::<Vec<_>>()
    ));
    text.push_str(&format!(
        "index vectors: 2 rows on 4 ports without them shrink the search space by {:.2}%\n",
        leak.reduction * 100.0
    ));
    ctx.write("report.txt", text.as_bytes())?;
    ctx.write_json(
        "report.json",
        json!({
            "keys": to_value(&keys),
            "switch_counts": counts,
            "reduction_ratio": reduction,
            "security": to_value(&sec),
            "small_matrix_leakage": to_value(&leak),
        }),
    )?;
    Ok(text)
}
