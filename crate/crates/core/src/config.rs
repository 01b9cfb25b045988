//! Line-oriented `key = value` config files: model architecture, attack
//! settings, synthetic dataset specs, and sweep grids. `#` starts a comment;
//! unknown or duplicated keys are hard errors.

use std::collections::BTreeMap;

use crate::attack::{AttackConfig, InitScheme};
use crate::error::{Error, Result};
use crate::losses::StyleLayers;
use crate::model::{LayerSpec, ModelSpec};
use crate::synth::SyntheticSpec;

#[derive(Clone, Debug)]
pub struct KvLine {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_kv(text: &str) -> Result<Vec<KvLine>> {
    let mut out = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(Error::Config {
                line: ix + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            });
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(Error::Config { line: ix + 1, message: "empty key".into() });
        }
        out.push(KvLine { line: ix + 1, key, value });
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(kv: &KvLine, what: &str) -> Result<T> {
    kv.value.parse::<T>().map_err(|_| Error::Config {
        line: kv.line,
        message: format!("invalid {what}: {:?}", kv.value),
    })
}

fn reject_duplicate(seen: &mut BTreeMap<String, usize>, kv: &KvLine) -> Result<()> {
    if let Some(first) = seen.insert(kv.key.clone(), kv.line) {
        return Err(Error::Config {
            line: kv.line,
            message: format!("duplicate key `{}` (first set on line {first})", kv.key),
        });
    }
    Ok(())
}

// ---- model config ---------------------------------------------------------

fn parse_layer(kv: &KvLine) -> Result<LayerSpec> {
    let mut parts = kv.value.split_whitespace();
    let kind = parts.next().unwrap_or_default();
    let mut opts = BTreeMap::new();
    for part in parts {
        let Some((k, v)) = part.split_once('=') else {
            return Err(Error::Config {
                line: kv.line,
                message: format!("expected name=value layer option, got {part:?}"),
            });
        };
        let parsed: usize = v.parse().map_err(|_| Error::Config {
            line: kv.line,
            message: format!("invalid layer option value {v:?}"),
        })?;
        if opts.insert(k.to_string(), parsed).is_some() {
            return Err(Error::Config {
                line: kv.line,
                message: format!("duplicate layer option {k:?}"),
            });
        }
    }
    let take = |opts: &mut BTreeMap<String, usize>, name: &str| -> Result<usize> {
        opts.remove(name).ok_or_else(|| Error::Config {
            line: kv.line,
            message: format!("{kind} layer requires `{name}=`"),
        })
    };
    let layer = match kind {
        "conv" => {
            let out_channels = take(&mut opts, "out")?;
            let kernel = take(&mut opts, "kernel")?;
            let stride = opts.remove("stride").unwrap_or(1);
            let pad = opts.remove("pad").unwrap_or(0);
            LayerSpec::Conv { out_channels, kernel, stride, pad }
        }
        "linear" => LayerSpec::Linear { out_features: take(&mut opts, "out")? },
        "relu" => LayerSpec::Relu,
        "flatten" => LayerSpec::Flatten,
        other => {
            return Err(Error::Config {
                line: kv.line,
                message: format!("unknown layer kind {other:?} (conv|relu|flatten|linear)"),
            })
        }
    };
    if let Some(extra) = opts.keys().next() {
        return Err(Error::Config {
            line: kv.line,
            message: format!("unknown option `{extra}` for {kind} layer"),
        });
    }
    Ok(layer)
}

pub fn parse_model_config(text: &str) -> Result<ModelSpec> {
    let mut input: Option<[usize; 3]> = None;
    let mut classes: Option<usize> = None;
    let mut layers = Vec::new();
    let mut seen = BTreeMap::new();
    for kv in parse_kv(text)? {
        match kv.key.as_str() {
            "input" => {
                reject_duplicate(&mut seen, &kv)?;
                let dims: Vec<usize> = kv
                    .value
                    .split('x')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config {
                        line: kv.line,
                        message: format!("invalid input shape {:?} (expected CxHxW)", kv.value),
                    })?;
                if dims.len() != 3 {
                    return Err(Error::Config {
                        line: kv.line,
                        message: format!("input shape needs 3 dims, got {}", dims.len()),
                    });
                }
                input = Some([dims[0], dims[1], dims[2]]);
            }
            "classes" => {
                reject_duplicate(&mut seen, &kv)?;
                classes = Some(parse_num(&kv, "classes")?);
            }
            "layer" => layers.push(parse_layer(&kv)?),
            other => {
                return Err(Error::Config {
                    line: kv.line,
                    message: format!("unknown key `{other}` in model config"),
                })
            }
        }
    }
    let spec = ModelSpec {
        input: input.ok_or_else(|| Error::Config { line: 0, message: "missing `input`".into() })?,
        classes: classes.ok_or_else(|| Error::Config { line: 0, message: "missing `classes`".into() })?,
        layers,
    };
    spec.layer_shapes()?;
    Ok(spec)
}

// ---- attack config --------------------------------------------------------

fn parse_style_layers(kv: &KvLine) -> Result<StyleLayers> {
    match kv.value.as_str() {
        "conv" => Ok(StyleLayers::ConvOutputs),
        "all" => Ok(StyleLayers::All),
        list => {
            let ixs: Vec<usize> = list
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config {
                    line: kv.line,
                    message: format!("invalid style_layers {list:?} (conv|all|comma-separated indices)"),
                })?;
            Ok(StyleLayers::Selected(ixs))
        }
    }
}

fn parse_layer_weights(kv: &KvLine) -> Result<BTreeMap<usize, f64>> {
    let mut map = BTreeMap::new();
    for part in kv.value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let Some((ix, w)) = part.split_once(':') else {
            return Err(Error::Config {
                line: kv.line,
                message: format!("expected index:weight, got {part:?}"),
            });
        };
        let ix: usize = ix.trim().parse().map_err(|_| Error::Config {
            line: kv.line,
            message: format!("invalid layer index {ix:?}"),
        })?;
        let w: f64 = w.trim().parse().map_err(|_| Error::Config {
            line: kv.line,
            message: format!("invalid layer weight {w:?}"),
        })?;
        map.insert(ix, w);
    }
    Ok(map)
}

/// Accepted keys: iterations, restarts, lr, beta1, beta2, eps, weight_decay,
/// init, seed, s_a, s_g, s_s, alpha_tv, style_layers, layer_weights,
/// log_every. Missing keys keep their defaults.
pub fn parse_attack_config(text: &str) -> Result<AttackConfig> {
    let mut config = AttackConfig::default();
    let mut seen = BTreeMap::new();
    for kv in parse_kv(text)? {
        reject_duplicate(&mut seen, &kv)?;
        match kv.key.as_str() {
            "iterations" => config.iterations = parse_num(&kv, "iterations")?,
            "restarts" => config.restarts = parse_num(&kv, "restarts")?,
            "lr" => config.lr = parse_num(&kv, "lr")?,
            "beta1" => config.beta1 = parse_num(&kv, "beta1")?,
            "beta2" => config.beta2 = parse_num(&kv, "beta2")?,
            "eps" => config.eps = parse_num(&kv, "eps")?,
            "weight_decay" => config.weight_decay = parse_num(&kv, "weight_decay")?,
            "seed" => config.seed = parse_num(&kv, "seed")?,
            "log_every" => config.log_every = parse_num(&kv, "log_every")?,
            "init" => {
                config.init = match kv.value.as_str() {
                    "uniform01" => InitScheme::Uniform01,
                    "gaussian" => InitScheme::Gaussian,
                    other => {
                        return Err(Error::Config {
                            line: kv.line,
                            message: format!("invalid init {other:?} (uniform01|gaussian)"),
                        })
                    }
                }
            }
            "s_a" => config.weights.s_a = parse_num(&kv, "s_a")?,
            "s_g" => config.weights.s_g = parse_num(&kv, "s_g")?,
            "s_s" => config.weights.s_s = parse_num(&kv, "s_s")?,
            "alpha_tv" => config.weights.alpha_tv = parse_num(&kv, "alpha_tv")?,
            "style_layers" => config.weights.style_layers = parse_style_layers(&kv)?,
            "layer_weights" => config.weights.layer_weights = parse_layer_weights(&kv)?,
            other => {
                return Err(Error::Config {
                    line: kv.line,
                    message: format!("unknown key `{other}` in attack config"),
                })
            }
        }
    }
    config.validate()?;
    Ok(config)
}

// ---- synthetic dataset config ----------------------------------------------

pub fn parse_synth_config(text: &str) -> Result<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    let mut seen = BTreeMap::new();
    for kv in parse_kv(text)? {
        reject_duplicate(&mut seen, &kv)?;
        match kv.key.as_str() {
            "classes" => spec.classes = parse_num(&kv, "classes")?,
            "victims_per_class" => spec.victims_per_class = parse_num(&kv, "victims_per_class")?,
            "priors_per_class" => spec.priors_per_class = parse_num(&kv, "priors_per_class")?,
            "train_per_class" => spec.train_per_class = parse_num(&kv, "train_per_class")?,
            "channels" => spec.channels = parse_num(&kv, "channels")?,
            "height" => spec.height = parse_num(&kv, "height")?,
            "width" => spec.width = parse_num(&kv, "width")?,
            "sigma_intra" => spec.sigma_intra = parse_num(&kv, "sigma_intra")?,
            "separation" => spec.separation = parse_num(&kv, "separation")?,
            "seed" => spec.seed = parse_num(&kv, "seed")?,
            other => {
                return Err(Error::Config {
                    line: kv.line,
                    message: format!("unknown key `{other}` in dataset config"),
                })
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

// ---- sweep grid -------------------------------------------------------------

/// Cartesian grid of loss coefficients for `sweep`.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub s_a: Vec<f64>,
    pub s_g: Vec<f64>,
    pub s_s: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            s_a: vec![0.1, 0.5, 1.0],
            s_g: vec![1.0, 5.0, 10.0],
            s_s: vec![1.0, 10.0, 10_000.0],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.s_a.is_empty() || self.s_g.is_empty() || self.s_s.is_empty() {
            return Err(Error::Invalid("sweep grid axis is empty".into()));
        }
        for v in self.s_a.iter().chain(&self.s_g).chain(&self.s_s) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Invalid(format!("grid values must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Cells as (s_a, s_g, s_s), s_a-major.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.s_a.len() * self.s_g.len() * self.s_s.len());
        for &a in &self.s_a {
            for &g in &self.s_g {
                for &s in &self.s_s {
                    out.push((a, g, s));
                }
            }
        }
        out
    }
}

fn parse_f64_list(kv: &KvLine) -> Result<Vec<f64>> {
    kv.value
        .split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::Config {
                line: kv.line,
                message: format!("invalid number {p:?} in list"),
            })
        })
        .collect()
}

pub fn parse_grid_config(text: &str) -> Result<SweepGrid> {
    let mut grid = SweepGrid::default();
    let mut seen = BTreeMap::new();
    for kv in parse_kv(text)? {
        reject_duplicate(&mut seen, &kv)?;
        match kv.key.as_str() {
            "s_a" => grid.s_a = parse_f64_list(&kv)?,
            "s_g" => grid.s_g = parse_f64_list(&kv)?,
            "s_s" => grid.s_s = parse_f64_list(&kv)?,
            other => {
                return Err(Error::Config {
                    line: kv.line,
                    message: format!("unknown key `{other}` in grid config"),
                })
            }
        }
    }
    grid.validate()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_config_round_trips_canonical_text() {
        let spec = ModelSpec::convnet_s(4);
        let parsed = parse_model_config(&spec.canonical_text()).unwrap();
        assert_eq!(parsed, spec);
        assert_eq!(parsed.fingerprint(), spec.fingerprint());
    }

    #[test]
    fn model_config_rejects_unknown_keys_and_bad_layers() {
        assert!(matches!(
            parse_model_config("input = 1x4x4\nclasses = 2\nlayr = relu\n"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(parse_model_config("input = 1x4x4\nclasses = 2\nlayer = conv out=2\n").is_err());
        assert!(parse_model_config("input = 1x4x4\nclasses = 2\nlayer = conv out=2 kernel=3 warp=1\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# a comment\n\ninput = 1x4x4  # trailing\nclasses = 2\nlayer = flatten\nlayer = linear out=2\n";
        let spec = parse_model_config(text).unwrap();
        assert_eq!(spec.classes, 2);
        assert_eq!(spec.layers.len(), 2);
    }

    #[test]
    fn attack_config_defaults_and_overrides() {
        let c = parse_attack_config("").unwrap();
        assert_eq!(c.iterations, 2000);
        assert_eq!(c.restarts, 1);
        assert_eq!(c.lr, 0.1);
        assert_eq!(c.weights.s_a, 1.0);
        assert_eq!(c.weights.s_g, 10.0);
        assert_eq!(c.weights.s_s, 10_000.0);
        assert_eq!(c.weights.alpha_tv, 1e-6);

        let text = "iterations = 500\nlr = 0.05\ninit = gaussian\ns_s = 0\nstyle_layers = 0,1\nlayer_weights = 1:0,0:2.5\nseed = 9\n";
        let c = parse_attack_config(text).unwrap();
        assert_eq!(c.iterations, 500);
        assert!(matches!(c.init, InitScheme::Gaussian));
        assert_eq!(c.weights.s_s, 0.0);
        assert_eq!(c.weights.style_layers, StyleLayers::Selected(vec![0, 1]));
        assert_eq!(c.weights.layer_weight(1), 0.0);
        assert_eq!(c.weights.layer_weight(0), 2.5);
        assert_eq!(c.weights.layer_weight(7), 1.0);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn attack_config_rejects_unknown_and_duplicate_keys() {
        assert!(matches!(
            parse_attack_config("iterations = 10\niterattions = 20\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_attack_config("lr = 0.1\nlr = 0.2\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(parse_attack_config("lr = 0\n").is_err());
    }

    #[test]
    fn grid_default_is_the_standard_grid() {
        let g = SweepGrid::default();
        assert_eq!(g.cells().len(), 27);
        let parsed = parse_grid_config("s_a = 1.0\ns_s = 0,10\n").unwrap();
        assert_eq!(parsed.s_a, vec![1.0]);
        assert_eq!(parsed.s_g, vec![1.0, 5.0, 10.0]);
        assert_eq!(parsed.cells().len(), 6);
        assert!(parse_grid_config("s_a = \n").is_err());
    }

    #[test]
    fn synth_config_parses() {
        let s = parse_synth_config("classes = 3\nsigma_intra = 0.2\nseed = 5\n").unwrap();
        assert_eq!(s.classes, 3);
        assert_eq!(s.sigma_intra, 0.2);
        assert!(parse_synth_config("sigma_intra = 1.5\n").is_err());
        assert!(parse_synth_config("bogus = 1\n").is_err());
    }
}
