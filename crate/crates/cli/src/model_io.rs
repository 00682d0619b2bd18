//! Text serialization of trained surrogates and generated datasets.
//!
//! Floating-point values are written as the hexadecimal IEEE-754 bit pattern
//! so that a save/load round trip is bit exact and reruns stay deterministic.

use crate::CliError;
use chaos_spde::chaos::{ChaosModel, ModelKind, TargetSet, TrainingGrid, Truncation};
use chaos_spde::nets::{Net, SampleLaw};
use std::fmt::Write as _;
use std::path::Path;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn f64_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn f64_from_hex(s: &str) -> Result<f64, CliError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| bad(format!("bad float field '{s}'")))
}

fn vec_hex(xs: &[f64]) -> String {
    xs.iter().map(|&x| f64_hex(x)).collect::<Vec<_>>().join(" ")
}

fn vec_from_hex(line: &str) -> Result<Vec<f64>, CliError> {
    line.split_whitespace().map(f64_from_hex).collect()
}

fn law_line(law: Option<(SampleLaw, u64)>) -> String {
    match law {
        None => "law none".into(),
        Some((SampleLaw::UniformBox { radius }, seed)) => {
            format!("law uniform {} {seed}", f64_hex(radius))
        }
        Some((SampleLaw::StudentT, seed)) => format!("law student-t {seed}"),
    }
}

fn parse_law(fields: &[&str]) -> Result<Option<(SampleLaw, u64)>, CliError> {
    match fields {
        ["none"] => Ok(None),
        ["uniform", radius, seed] => Ok(Some((
            SampleLaw::UniformBox { radius: f64_from_hex(radius)? },
            seed.parse().map_err(|_| bad("bad law seed"))?,
        ))),
        ["student-t", seed] => Ok(Some((
            SampleLaw::StudentT,
            seed.parse().map_err(|_| bad("bad law seed"))?,
        ))),
        _ => Err(bad("unrecognized law line in model file")),
    }
}

/// Writes a surrogate to a text model file tagged with the configuration hash.
pub fn save_model(path: &Path, model: &ChaosModel, config_hash: &str) -> Result<(), CliError> {
    let trunc = model.truncation();
    let nets = model.nets();
    let first = &nets[0];
    let mut text = String::new();
    writeln!(text, "chaos-model v1").unwrap();
    writeln!(text, "config_hash {config_hash}").unwrap();
    writeln!(text, "trunc {} {} {}", trunc.i_count, trunc.j_count, trunc.order).unwrap();
    let kind = match model.kind() {
        ModelKind::Deterministic => "deterministic".to_string(),
        ModelKind::RandomFeature { shared } => format!("random-feature {shared}"),
    };
    writeln!(text, "kind {kind}").unwrap();
    writeln!(
        text,
        "shape {} {} {} {}",
        first.space_dim(),
        first.out_dim(),
        first.neurons(),
        nets.len()
    )
    .unwrap();
    for net in nets {
        let (a0, a1, b) = net.inner_params();
        writeln!(text, "net frozen={}", net.is_frozen()).unwrap();
        writeln!(text, "{}", law_line(net.law())).unwrap();
        writeln!(text, "a0 {}", vec_hex(a0)).unwrap();
        writeln!(text, "a1 {}", vec_hex(a1)).unwrap();
        writeln!(text, "b {}", vec_hex(b)).unwrap();
        writeln!(text, "y {}", vec_hex(net.readouts())).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a model file back; checks the configuration hash when one is given.
pub fn load_model(path: &Path, expect_hash: Option<&str>) -> Result<ChaosModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read model file {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| bad(format!("model file truncated before {what}")))
    };

    if next("header")? != "chaos-model v1" {
        return Err(bad("not a chaos-model v1 file"));
    }
    let hash_line = next("config hash")?;
    let hash = hash_line
        .strip_prefix("config_hash ")
        .ok_or_else(|| bad("missing config_hash line"))?;
    if let Some(expect) = expect_hash {
        if hash != expect {
            return Err(bad(format!(
                "model file was produced by configuration {hash}, expected {expect}"
            )));
        }
    }

    let trunc_fields: Vec<&str> = next("truncation")?
        .strip_prefix("trunc ")
        .ok_or_else(|| bad("missing trunc line"))?
        .split_whitespace()
        .collect();
    let [i, j, k] = trunc_fields.as_slice() else {
        return Err(bad("malformed trunc line"));
    };
    let trunc = Truncation {
        i_count: i.parse().map_err(|_| bad("bad trunc i"))?,
        j_count: j.parse().map_err(|_| bad("bad trunc j"))?,
        order: k.parse().map_err(|_| bad("bad trunc order"))?,
    };

    let kind_fields: Vec<&str> = next("kind")?
        .strip_prefix("kind ")
        .ok_or_else(|| bad("missing kind line"))?
        .split_whitespace()
        .collect();
    let kind = match kind_fields.as_slice() {
        ["deterministic"] => ModelKind::Deterministic,
        ["random-feature", shared] => ModelKind::RandomFeature {
            shared: shared.parse().map_err(|_| bad("bad shared flag"))?,
        },
        _ => return Err(bad("malformed kind line")),
    };

    let shape_fields: Vec<&str> = next("shape")?
        .strip_prefix("shape ")
        .ok_or_else(|| bad("missing shape line"))?
        .split_whitespace()
        .collect();
    let [m, d, n, count] = shape_fields.as_slice() else {
        return Err(bad("malformed shape line"));
    };
    let space_dim: usize = m.parse().map_err(|_| bad("bad space_dim"))?;
    let out_dim: usize = d.parse().map_err(|_| bad("bad out_dim"))?;
    let neurons: usize = n.parse().map_err(|_| bad("bad neuron count"))?;
    let count: usize = count.parse().map_err(|_| bad("bad propagator count"))?;

    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let frozen = next("net header")?
            .strip_prefix("net frozen=")
            .ok_or_else(|| bad("missing net line"))?
            .parse()
            .map_err(|_| bad("bad frozen flag"))?;
        let law_fields: Vec<&str> = next("law")?
            .strip_prefix("law ")
            .ok_or_else(|| bad("missing law line"))?
            .split_whitespace()
            .collect();
        let law = parse_law(&law_fields)?;
        let mut array = |tag: &str| -> Result<Vec<f64>, CliError> {
            let line = next(tag)?;
            let body = line
                .strip_prefix(tag)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| bad(format!("missing {tag} line")))?;
            vec_from_hex(body)
        };
        let a0 = array("a0")?;
        let a1 = array("a1")?;
        let b = array("b")?;
        let y = array("y")?;
        if a0.len() != neurons {
            return Err(bad("net parameter arrays disagree with the shape header"));
        }
        nets.push(Net::from_parts(space_dim, out_dim, a0, a1, b, y, frozen, law)?);
    }
    Ok(ChaosModel::from_parts(trunc, nets, kind)?)
}

/// Writes supervised targets with the grid layout and the flagged count.
pub fn save_targets(
    path: &Path,
    grid: &TrainingGrid,
    targets: &TargetSet,
    config_hash: &str,
) -> Result<(), CliError> {
    let mut text = String::new();
    writeln!(text, "config_hash,beta,time_index,point_index,scenario,value").unwrap();
    let beta_count = grid.derivative_orders().len();
    for b in 0..beta_count {
        for m2 in 0..grid.times().len() {
            for m3 in 0..grid.point_count() {
                for m1 in 0..grid.scenarios() {
                    writeln!(
                        text,
                        "{config_hash},{b},{m2},{m3},{m1},{}",
                        f64_hex(targets.value(b, m2, m3, m1))
                    )
                    .unwrap();
                }
            }
        }
    }
    writeln!(text, "# flagged {}", targets.flagged).unwrap();
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads targets back into the layout of `grid`.
pub fn load_targets(
    path: &Path,
    grid: &TrainingGrid,
    expect_hash: &str,
) -> Result<TargetSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        bad(format!(
            "cannot read targets {}: {e}; run the generate step first",
            path.display()
        ))
    })?;
    let beta_count = grid.derivative_orders().len();
    let time_count = grid.times().len();
    let point_count = grid.point_count();
    let scenarios = grid.scenarios();
    let expected_rows = beta_count * time_count * point_count * scenarios;
    let mut values = Vec::with_capacity(expected_rows);
    let mut flagged = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 || line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# flagged ") {
            flagged = rest.parse().map_err(|_| bad("bad flagged count"))?;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [hash, _b, _m2, _m3, _m1, value] = fields.as_slice() else {
            return Err(bad(format!("targets line {}: expected 6 fields", line_no + 1)));
        };
        if *hash != expect_hash {
            return Err(bad(format!(
                "targets were generated under configuration {hash}, expected {expect_hash}"
            )));
        }
        values.push(f64_from_hex(value)?);
    }
    if values.len() != expected_rows {
        return Err(bad(format!(
            "targets hold {} values, the grid needs {expected_rows}",
            values.len()
        )));
    }
    let mut set = TargetSet::from_values(grid, |b, m2, m3, m1| {
        values[((b * time_count + m2) * point_count + m3) * scenarios + m1]
    });
    set.flagged = flagged;
    Ok(set)
}
