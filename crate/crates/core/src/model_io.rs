//! Versioned binary container for trained models.
//!
//! Layout: magic `IISMODEL`, `u32` version, `u32` header length, a JSON
//! header, `u32` tensor count, then per tensor a `u32`-prefixed UTF-8 name,
//! `u32` rank, `u64` dims and little-endian `f64` data. All integers are
//! little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classifier::{ActionModel, ForestModel, ForestParams, PairMachine, SvmModel, Tree};
use crate::error::{Error, PathContext, Result};
use crate::forecaster::{Architecture, ClampLayout, ForecastModel, TrainConfig, TrainingLog};
use crate::frames::ActionLabel;

pub const MAGIC: &[u8; 8] = b"IISMODEL";
pub const FORMAT_VERSION: u32 = 1;

/// Conventional file names inside a model directory.
pub const FORECASTER_FILE: &str = "forecaster.iism";
pub const CLASSIFIER_FILE: &str = "classifier.iism";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Header {
    Forecaster {
        arch: Architecture,
        clamp: ClampLayout,
        config: Option<TrainConfig>,
        log: TrainingLog,
    },
    Svm {
        dim: usize,
        classes: Vec<ActionLabel>,
        gamma: f64,
        c: f64,
        class_weights: [f64; ActionLabel::COUNT],
        pairs: Vec<PairHeader>,
    },
    Forest {
        dim: usize,
        params: ForestParams,
        class_weights: [f64; ActionLabel::COUNT],
        trees: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairHeader {
    pos: ActionLabel,
    neg: ActionLabel,
    rho: f64,
}

/// Any model a container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Forecaster(ForecastModel),
    Action(ActionModel),
}

impl SavedModel {
    pub fn dim(&self) -> usize {
        use crate::classifier::ActionClassifier;
        match self {
            SavedModel::Forecaster(m) => m.arch.dim,
            SavedModel::Action(m) => m.dim(),
        }
    }
}

type Named = Vec<(String, Array2<f64>)>;

fn write_container<W: Write>(mut w: W, header: &Header, tensors: &Named) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(2)?;
        w.write_u64::<LittleEndian>(t.nrows() as u64)?;
        w.write_u64::<LittleEndian>(t.ncols() as u64)?;
        for v in t.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_container<R: Read>(mut r: R) -> Result<(Header, BTreeMap<String, Array2<f64>>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container("not a model container (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {version}"
        )));
    }
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let count = r.read_u32::<LittleEndian>()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?;
        let rank = r.read_u32::<LittleEndian>()?;
        if rank != 2 {
            return Err(Error::Container(format!(
                "tensor {name} has rank {rank}, expected 2"
            )));
        }
        let rows = r.read_u64::<LittleEndian>()? as usize;
        let cols = r.read_u64::<LittleEndian>()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::Container(format!("tensor {name} is implausibly large")))?;
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        let t = Array2::from_shape_vec((rows, cols), data).expect("size checked");
        tensors.insert(name, t);
    }
    Ok((header, tensors))
}

fn take(
    tensors: &mut BTreeMap<String, Array2<f64>>,
    name: &str,
    shape: Option<(usize, usize)>,
) -> Result<Array2<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Container(format!("missing tensor {name}")))?;
    if let Some(shape) = shape {
        if t.dim() != shape {
            return Err(Error::Container(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.dim()
            )));
        }
    }
    Ok(t)
}

fn index_vec(t: &Array2<f64>, name: &str) -> Result<Vec<usize>> {
    t.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                Ok(v as usize)
            } else {
                Err(Error::Container(format!(
                    "tensor {name} holds a non-index value {v}"
                )))
            }
        })
        .collect()
}

fn row(values: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    Array2::from_shape_vec((1, v.len()), v).expect("row vector")
}

fn encode_forecaster(m: &ForecastModel) -> (Header, Named) {
    let header = Header::Forecaster {
        arch: m.arch,
        clamp: m.clamp,
        config: m.config.clone(),
        log: m.log.clone(),
    };
    let tensors = m
        .arch
        .param_shapes()
        .into_iter()
        .zip(&m.params)
        .map(|((name, _), t)| (name, t.clone()))
        .collect();
    (header, tensors)
}

fn encode_svm(m: &SvmModel) -> (Header, Named) {
    let header = Header::Svm {
        dim: m.dim(),
        classes: m.classes.clone(),
        gamma: m.gamma,
        c: m.c,
        class_weights: m.class_weights,
        pairs: m
            .pairs
            .iter()
            .map(|p| PairHeader {
                pos: p.pos,
                neg: p.neg,
                rho: p.rho,
            })
            .collect(),
    };
    let mut tensors = vec![("support_vectors".to_string(), m.support_vectors.clone())];
    for (k, p) in m.pairs.iter().enumerate() {
        tensors.push((format!("pair{k}.sv"), row(p.sv.iter().map(|&i| i as f64))));
        tensors.push((format!("pair{k}.coef"), row(p.coef.iter().copied())));
    }
    (header, tensors)
}

fn encode_forest(m: &ForestModel) -> (Header, Named) {
    let header = Header::Forest {
        dim: m.dim,
        params: m.params.clone(),
        class_weights: m.class_weights,
        trees: m.trees.len(),
    };
    let mut tensors = Vec::new();
    for (k, t) in m.trees.iter().enumerate() {
        tensors.push((
            format!("tree{k}.feature"),
            row(t.feature.iter().map(|f| f.map_or(-1.0, |f| f as f64))),
        ));
        tensors.push((
            format!("tree{k}.threshold"),
            row(t.threshold.iter().copied()),
        ));
        tensors.push((
            format!("tree{k}.left"),
            row(t.left.iter().map(|&i| i as f64)),
        ));
        tensors.push((
            format!("tree{k}.right"),
            row(t.right.iter().map(|&i| i as f64)),
        ));
        let value =
            Array2::from_shape_fn((t.n_nodes(), ActionLabel::COUNT), |(i, c)| t.value[i][c]);
        tensors.push((format!("tree{k}.value"), value));
    }
    (header, tensors)
}

fn decode(header: Header, mut tensors: BTreeMap<String, Array2<f64>>) -> Result<SavedModel> {
    let model = match header {
        Header::Forecaster {
            arch,
            clamp,
            config,
            log,
        } => {
            arch.validate()?;
            let params = arch
                .param_shapes()
                .into_iter()
                .map(|(name, shape)| take(&mut tensors, &name, Some(shape)))
                .collect::<Result<Vec<_>>>()?;
            let m = ForecastModel {
                arch,
                params,
                clamp,
                config,
                log,
            };
            if !m.is_finite() {
                return Err(Error::NonFinite("forecaster weights"));
            }
            SavedModel::Forecaster(m)
        }
        Header::Svm {
            dim,
            classes,
            gamma,
            c,
            class_weights,
            pairs,
        } => {
            let sv = take(&mut tensors, "support_vectors", None)?;
            if sv.ncols() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: sv.ncols(),
                });
            }
            let mut machines = Vec::with_capacity(pairs.len());
            for (k, p) in pairs.into_iter().enumerate() {
                let idx = take(&mut tensors, &format!("pair{k}.sv"), None)?;
                let coef = take(&mut tensors, &format!("pair{k}.coef"), Some(idx.dim()))?;
                machines.push(PairMachine {
                    pos: p.pos,
                    neg: p.neg,
                    sv: index_vec(&idx, "sv")?,
                    coef: coef.iter().copied().collect(),
                    rho: p.rho,
                });
            }
            SavedModel::Action(ActionModel::Svm(SvmModel::new(
                classes,
                gamma,
                c,
                class_weights,
                sv,
                machines,
            )?))
        }
        Header::Forest {
            dim,
            params,
            class_weights,
            trees,
        } => {
            let mut out = Vec::with_capacity(trees);
            for k in 0..trees {
                let feature = take(&mut tensors, &format!("tree{k}.feature"), None)?;
                let n = feature.ncols();
                let shape = Some((1, n));
                let threshold = take(&mut tensors, &format!("tree{k}.threshold"), shape)?;
                let left = take(&mut tensors, &format!("tree{k}.left"), shape)?;
                let right = take(&mut tensors, &format!("tree{k}.right"), shape)?;
                let value = take(
                    &mut tensors,
                    &format!("tree{k}.value"),
                    Some((n, ActionLabel::COUNT)),
                )?;
                let tree = Tree {
                    feature: feature
                        .iter()
                        .map(|&f| {
                            if f < 0.0 {
                                Ok(None)
                            } else {
                                index_vec(&row([f]), "feature").map(|v| Some(v[0]))
                            }
                        })
                        .collect::<Result<_>>()?,
                    threshold: threshold.iter().copied().collect(),
                    left: index_vec(&left, "left")?,
                    right: index_vec(&right, "right")?,
                    value: value
                        .rows()
                        .into_iter()
                        .map(|r| [r[0], r[1], r[2]])
                        .collect(),
                };
                tree.check(dim)?;
                out.push(tree);
            }
            SavedModel::Action(ActionModel::Forest(ForestModel {
                dim,
                params,
                class_weights,
                trees: out,
            }))
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Container(format!("unexpected tensor {name}")));
    }
    Ok(model)
}

pub fn write_model<W: Write>(w: W, model: &SavedModel) -> Result<()> {
    let (header, tensors) = match model {
        SavedModel::Forecaster(m) => encode_forecaster(m),
        SavedModel::Action(ActionModel::Svm(m)) => encode_svm(m),
        SavedModel::Action(ActionModel::Forest(m)) => encode_forest(m),
    };
    write_container(w, &header, &tensors)
}

pub fn read_model<R: Read>(r: R) -> Result<SavedModel> {
    let (header, tensors) = read_container(r)?;
    decode(header, tensors)
}

pub fn save_model(path: impl AsRef<Path>, model: &SavedModel) -> Result<()> {
    let path = path.as_ref();
    write_model(BufWriter::new(File::create(path).at(path)?), model)
}

/// Loads a container, rejecting it when `expected_dim` is given and differs.
pub fn load_model(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<SavedModel> {
    let path = path.as_ref();
    let model = read_model(BufReader::new(File::open(path).at(path)?))?;
    if let Some(d) = expected_dim {
        if model.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                found: model.dim(),
            });
        }
    }
    Ok(model)
}

pub fn save_forecaster(path: impl AsRef<Path>, model: &ForecastModel) -> Result<()> {
    save_model(path, &SavedModel::Forecaster(model.clone()))
}

pub fn load_forecaster(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<ForecastModel> {
    match load_model(path, expected_dim)? {
        SavedModel::Forecaster(m) => Ok(m),
        SavedModel::Action(m) => Err(Error::Container(format!(
            "expected a forecaster, found a {} model",
            m.kind()
        ))),
    }
}

pub fn save_action_model(path: impl AsRef<Path>, model: &ActionModel) -> Result<()> {
    save_model(path, &SavedModel::Action(model.clone()))
}

pub fn load_action_model(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<ActionModel> {
    match load_model(path, expected_dim)? {
        SavedModel::Action(m) => Ok(m),
        SavedModel::Forecaster(_) => Err(Error::Container(
            "expected a classifier, found a forecaster".into(),
        )),
    }
}
