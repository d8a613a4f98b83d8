use std::path::Path;

use anyhow::{bail, Context};
use kfair::bounds::{propagate, IntervalBox};
use kfair::data::{make_planted_network, PlantInterval};
use kfair::explain::{explain as run_explain, ExplanationReport};
use kfair::milp::{certify as run_certify, encode_pair_fairness, CertifyConfig, SolveConfig};
use kfair::mitigate::{augment_dataset, evaluate_mitigation, fine_tune, FineTuneConfig, GuardPolicy};
use kfair::search::run_search;
use kfair::{Dataset, ExplainConfig, FeatureSchema, Network, PlantSpec, SearchConfig, SearchReport, Verdict};
use serde::Serialize;
use serde_json::Value;

use crate::manifest::Recorder;
use crate::{Inputs, SearchArgs, EXIT_DEGENERATE, EXIT_OK, EXIT_UNFAIR, EXIT_UNKNOWN};

fn load(inputs: &Inputs, rec: &mut Recorder) -> anyhow::Result<(Network, FeatureSchema)> {
    let schema = FeatureSchema::load(&inputs.schema)?;
    let network = Network::load(&inputs.model)?;
    if network.input_width != schema.input_width() {
        bail!(
            "{}: network expects {} inputs but the schema encodes {}",
            inputs.model.display(),
            network.input_width,
            schema.input_width()
        );
    }
    rec.input(&inputs.schema)?;
    rec.input(&inputs.model)?;
    Ok((network, schema))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, rec: &mut Recorder) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    rec.input(path)?;
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
pub fn certify(
    inputs: &Inputs,
    timeout: f64,
    tolerance: f64,
    node_limit: Option<usize>,
    workers: usize,
    dump_lp: Option<&Path>,
    out: &Path,
    argv: &[String],
) -> anyhow::Result<u8> {
    let mut rec = Recorder::new("certify", argv);
    let (network, schema) = load(inputs, &mut rec)?;
    let config = CertifyConfig {
        solve: SolveConfig {
            timeout_seconds: timeout,
            tolerance,
            node_limit,
            workers,
            ..Default::default()
        },
    };
    #[derive(Serialize)]
    struct Resolved<'a> {
        epsilon: f64,
        certify: &'a CertifyConfig,
    }
    rec.config(
        &Resolved {
            epsilon: inputs.epsilon,
            certify: &config,
        },
        None,
    );
    if let Some(path) = dump_lp {
        let bounds = propagate(&network, &IntervalBox::unit(network.input_width))?;
        let enc = encode_pair_fairness(&network, &schema, &bounds, inputs.epsilon)?;
        std::fs::write(path, enc.problem.to_lp_format()).with_context(|| format!("writing {}", path.display()))?;
        rec.output(path);
    }
    let cert = run_certify(&network, &schema, inputs.epsilon, &config)?;
    rec.timing("solver_seconds", Some(cert.solver.wall_time_seconds));
    rec.write_json(out, &cert)?;
    rec.finish(out)?;
    let code = match &cert.verdict {
        Verdict::Fair { .. } => EXIT_OK,
        Verdict::Unfair { .. } => EXIT_UNFAIR,
        Verdict::Unknown { reason } => {
            log::warn!("verdict unknown: {reason}");
            EXIT_UNKNOWN
        }
    };
    println!("{}", verdict_line(&cert.verdict));
    Ok(code)
}

fn verdict_line(v: &Verdict) -> String {
    match v {
        Verdict::Fair { max_logit_gap } => format!("fair (logit gap <= {max_logit_gap:.6})"),
        Verdict::Unfair { groups, score_gap, .. } => {
            format!("unfair: {} vs {} differ by {score_gap:.6}", groups[0].label, groups[1].label)
        }
        Verdict::Unknown { reason } => format!("unknown: {reason}"),
    }
}

pub fn search_config(args: &SearchArgs, epsilon: f64) -> SearchConfig {
    let defaults = SearchConfig::default();
    SearchConfig {
        strategy: args.strategy(),
        epsilon,
        timeout_seconds: args.timeout,
        max_iterations: args.max_iterations,
        rng_seed: args.seed,
        stop_at_k: args.stop_at_k,
        use_solver: !args.no_solver,
        solver: SolveConfig {
            timeout_seconds: args.solver_timeout,
            node_limit: Some(args.solver_node_limit),
            ..defaults.solver.clone()
        },
        ..defaults
    }
}

fn search_timings(rec: &mut Recorder, prefix: &str, r: &SearchReport) {
    rec.timing(&format!("{prefix}t_first_id_seconds"), r.t_first_id_seconds);
    rec.timing(&format!("{prefix}t_max_k_seconds"), r.t_max_k_seconds);
    rec.timing(&format!("{prefix}search_seconds"), Some(r.elapsed_seconds));
}

pub fn search(inputs: &Inputs, data: &Path, args: &SearchArgs, out: &Path, argv: &[String]) -> anyhow::Result<u8> {
    let mut rec = Recorder::new("search", argv);
    let (network, schema) = load(inputs, &mut rec)?;
    let dataset = Dataset::load_csv(data, &schema, None)?;
    rec.input(data)?;
    let config = search_config(args, inputs.epsilon);
    rec.config(&config, Some(args.seed));
    let report = run_search(&network, &schema, &dataset, &config)?;
    search_timings(&mut rec, "", &report);
    rec.write_json(out, &report)?;
    rec.finish(out)?;
    println!(
        "{}: max k {}, {} discriminatory instances, success rate {:.2}%",
        report.strategy, report.max_k, report.num_id, report.success_rate
    );
    Ok(EXIT_OK)
}

pub fn explain(inputs: &Inputs, search_report: &Path, config: &ExplainConfig, out: &Path, argv: &[String]) -> anyhow::Result<u8> {
    let mut rec = Recorder::new("explain", argv);
    let (network, schema) = load(inputs, &mut rec)?;
    let report: SearchReport = read_json(search_report, &mut rec)?;
    rec.config(config, Some(config.rng_seed));
    let witnesses = report
        .best_instances
        .iter()
        .map(|r| schema.from_raw(&r.instance))
        .collect::<kfair::Result<Vec<_>>>()?;
    if witnesses.is_empty() {
        return Err(kfair::Error::Degenerate(format!(
            "{} holds no discriminatory instances to explain",
            search_report.display()
        ))
        .into());
    }
    let explanation = run_explain(&network, &schema, &witnesses, config)?;
    rec.write_json(out, &explanation)?;
    rec.finish(out)?;
    println!(
        "{} validated predicate(s), {} rejected",
        explanation.predicates.len(),
        explanation.rejected.len()
    );
    for p in &explanation.predicates {
        println!("  {}", p.text);
    }
    Ok(EXIT_OK)
}

pub struct MitigateInputs<'a> {
    pub data: &'a Path,
    pub explanation: &'a Path,
    pub search_report: &'a Path,
    pub skip_retrain: bool,
    pub test_fraction: f64,
}

#[derive(Serialize)]
struct GuardFile<'a> {
    policy: GuardPolicy,
    guards: &'a [kfair::ExplanationPredicate],
}

pub fn mitigate(
    inputs: &Inputs,
    files: &MitigateInputs,
    tune: &FineTuneConfig,
    args: &SearchArgs,
    out_dir: &Path,
    argv: &[String],
) -> anyhow::Result<u8> {
    let mut rec = Recorder::new("mitigate", argv);
    let (network, schema) = load(inputs, &mut rec)?;
    let data = Dataset::load_csv(files.data, &schema, Some("label"))?;
    rec.input(files.data)?;
    let explanation: ExplanationReport = read_json(files.explanation, &mut rec)?;
    let report: SearchReport = read_json(files.search_report, &mut rec)?;
    let search = search_config(args, inputs.epsilon);

    #[derive(Serialize)]
    struct Resolved<'a> {
        test_fraction: f64,
        skip_retrain: bool,
        fine_tune: &'a FineTuneConfig,
        search: &'a SearchConfig,
    }
    rec.config(
        &Resolved {
            test_fraction: files.test_fraction,
            skip_retrain: files.skip_retrain,
            fine_tune: tune,
            search: &search,
        },
        Some(args.seed),
    );

    let (train, held_out) = data.train_test_split(files.test_fraction, args.seed)?;
    let guards = explanation.predicates;
    let policy = GuardPolicy::Abstain;
    rec.write_json(&out_dir.join("guards.json"), &GuardFile { policy, guards: &guards })?;

    let debiased = if files.skip_retrain {
        None
    } else {
        let augmented = augment_dataset(&train, &report.discriminatory, &schema, &network)?;
        log::info!("augmented training set: {} -> {} rows", train.len(), augmented.len());
        let net = fine_tune(&network, &augmented, &schema, tune)?;
        let path = out_dir.join("debiased_model.json");
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        net.save(&path)?;
        rec.output(&path);
        Some(net)
    };

    let result = evaluate_mitigation(&network, debiased.as_ref(), &guards, policy, &schema, &held_out, &train, &search)?;
    for v in &result.variants {
        search_timings(&mut rec, &format!("{:?}.", v.variant), &v.search);
    }
    let out = out_dir.join("mitigation_report.json");
    rec.write_json(&out, &result)?;
    rec.finish(&out)?;
    for v in &result.variants {
        println!(
            "{:<12} accuracy {:6.2}%  max k {:2}  #ID {:6}  success rate {:6.2}%",
            variant_name(v.variant),
            v.accuracy,
            v.search.max_k,
            v.search.num_id,
            v.search.success_rate
        );
    }
    if let Some(d) = result.accuracy_delta {
        println!("accuracy delta (debiased - original): {d:+.2} points");
    }
    Ok(EXIT_OK)
}

fn variant_name(v: kfair::mitigate::Variant) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|x| x.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn report(input: &Path) -> anyhow::Result<u8> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    let code = if value.get("verdict").is_some() {
        let cert: kfair::Certificate = serde_json::from_value(value)?;
        println!("certificate (epsilon {})", cert.epsilon);
        println!("  {}", verdict_line(&cert.verdict));
        println!(
            "  solver: {:?}, {} nodes, {} variables ({} binary), {} constraints",
            cert.solver.status, cert.solver.nodes_explored, cert.solver.variables, cert.solver.binaries, cert.solver.constraints
        );
        match cert.verdict {
            Verdict::Fair { .. } => EXIT_OK,
            Verdict::Unfair { .. } => EXIT_UNFAIR,
            Verdict::Unknown { .. } => EXIT_UNKNOWN,
        }
    } else if value.get("variants").is_some() {
        let r: kfair::MitigationReport = serde_json::from_value(value)?;
        println!("{:<12} {:>8} {:>6} {:>8} {:>10}", "variant", "acc%", "max_k", "#ID", "succ%");
        for v in &r.variants {
            println!(
                "{:<12} {:>8.2} {:>6} {:>8} {:>10.2}",
                variant_name(v.variant),
                v.accuracy,
                v.search.max_k,
                v.search.num_id,
                v.search.success_rate
            );
        }
        EXIT_OK
    } else if value.get("predicates").is_some() {
        let r: ExplanationReport = serde_json::from_value(value)?;
        println!("explanation: kappa {}, tree depth {}, {} leaves", r.kappa, r.tree_depth, r.tree_leaves);
        for p in &r.predicates {
            println!(
                "  [size {}, diff {:.2}, cov {:.4}, pert.k {}] {}",
                p.size,
                p.mean_k_diff,
                p.coverage_volume,
                p.perturbed_k.map_or("-".into(), |v| format!("{v:.2}")),
                p.text
            );
        }
        if r.predicates.is_empty() {
            EXIT_DEGENERATE
        } else {
            EXIT_OK
        }
    } else if value.get("max_k").is_some() {
        let r: SearchReport = serde_json::from_value(value)?;
        println!("search ({})", r.strategy);
        println!("  iterations {}, generated {}", r.iterations, r.generated);
        println!("  max k {}, avg k {:.2}, #ID {}, success rate {:.2}%", r.max_k, r.avg_k, r.num_id, r.success_rate);
        println!("  solver queries {}, seeds {}", r.solver_queries, r.solver_seeds);
        EXIT_OK
    } else {
        bail!("{}: not a report written by this tool", input.display());
    };
    Ok(code)
}

fn parse_region(text: &str) -> anyhow::Result<PlantInterval> {
    let (feature, range) = text.split_once('=').with_context(|| format!("region `{text}` is not feature=lower:upper"))?;
    let (lo, hi) = range.split_once(':').with_context(|| format!("region `{text}` is not feature=lower:upper"))?;
    Ok(PlantInterval {
        feature: feature.trim().into(),
        lower: lo.trim().parse().with_context(|| format!("bad lower bound in `{text}`"))?,
        upper: hi.trim().parse().with_context(|| format!("bad upper bound in `{text}`"))?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn plant(
    schema_path: &Path,
    region: &[String],
    k: usize,
    epsilon: f64,
    ramp: f64,
    seed: u64,
    out: &Path,
    data: Option<&Path>,
    rows: usize,
    argv: &[String],
) -> anyhow::Result<u8> {
    let mut rec = Recorder::new("plant", argv);
    let schema = FeatureSchema::load(schema_path)?;
    rec.input(schema_path)?;
    let region = region.iter().map(|r| parse_region(r)).collect::<anyhow::Result<Vec<_>>>()?;
    let spec = PlantSpec::graded(region, schema.k(), k, epsilon, ramp);
    rec.config(&spec, Some(seed));
    let net = make_planted_network(&schema, &spec, seed)?;
    rec.write_json(out, &net)?;
    if let Some(path) = data {
        let ds = Dataset::sample_labeled(&schema, &net, rows, 0.0, seed)?;
        ds.save_csv(path, &schema)?;
        rec.output(path);
    }
    rec.finish(out)?;
    println!("planted k = {} over {} protected combinations", spec.expected_max_k(epsilon), schema.k());
    Ok(EXIT_OK)
}
