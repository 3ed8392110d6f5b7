use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};
use crate::kernels::{EdgeParams, Kernel, KernelId, ParamScope};

/// Index maps `G`, `S_l` and `I_{i,j}` of a kernel on `p` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterIndex {
    kernel: Kernel,
}

pub fn build_index(kernel_id: KernelId, p: usize) -> Result<ParameterIndex> {
    Ok(ParameterIndex {
        kernel: Kernel::new(kernel_id, p)?,
    })
}

impl ParameterIndex {
    pub fn for_kernel(kernel: Kernel) -> Self {
        ParameterIndex { kernel }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn q(&self) -> usize {
        self.kernel.num_params()
    }

    /// The global set `G`.
    pub fn global_set(&self) -> Vec<usize> {
        (0..self.q())
            .filter(|&l| self.kernel.scope(l) == ParamScope::All)
            .collect()
    }

    pub fn edge_scope(&self, i: usize, j: usize) -> EdgeParams {
        self.kernel.edge_params(i, j)
    }

    pub fn param_scope(&self, l: usize) -> ParamScope {
        self.kernel.scope(l)
    }

    /// `S_l` as explicit pairs `(i, j)` with `i < j`.
    pub fn scope_pairs(&self, l: usize) -> Vec<(usize, usize)> {
        let pairs = self.kernel.pairs();
        match self.kernel.scope(l) {
            ParamScope::All => pairs.iter().collect(),
            ParamScope::Node(v) => (0..self.kernel.p())
                .filter(|&k| k != v)
                .map(|k| (v.min(k), v.max(k)))
                .collect(),
            ParamScope::Pair(k) => vec![pairs.iter().nth(k).expect("pair index in range")],
        }
    }

    pub fn scope_size(&self, l: usize) -> usize {
        self.kernel.scope_size(l)
    }
}

/// A full parameter vector together with its kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    kernel: Kernel,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new(kernel: Kernel, values: Vec<f64>) -> Result<Self> {
        if values.len() != kernel.num_params() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} on p = {} has {} parameters, got {}",
                kernel.id(),
                kernel.p(),
                kernel.num_params(),
                values.len()
            )));
        }
        let ar = matches!(kernel.id(), KernelId::GlobalAr | KernelId::EdgewiseAr);
        for (l, &v) in values.iter().enumerate() {
            let ok = if ar {
                (0.0..=1.0).contains(&v)
            } else {
                v.is_finite() && v > 0.0
            };
            if !ok {
                return Err(ArnetError::InvalidArgument(format!(
                    "parameter {} = {v} outside its domain",
                    kernel.param_name(l)
                )));
            }
        }
        Ok(ParameterSet { kernel, values })
    }

    /// Globals followed by the node blocks.
    pub fn from_blocks(kernel: Kernel, globals: &[f64], xi: &[f64], eta: &[f64]) -> Result<Self> {
        if globals.len() != kernel.num_globals() {
            return Err(ArnetError::InvalidArgument(format!(
                "kernel {} expects {} globals, got {}",
                kernel.id(),
                kernel.num_globals(),
                globals.len()
            )));
        }
        let mut values = globals.to_vec();
        if kernel.id().has_node_params() {
            if xi.len() != kernel.p() || eta.len() != kernel.p() {
                return Err(ArnetError::InvalidArgument(format!(
                    "xi and eta need {} entries, got {} and {}",
                    kernel.p(),
                    xi.len(),
                    eta.len()
                )));
            }
            values.extend_from_slice(xi);
            values.extend_from_slice(eta);
        }
        ParameterSet::new(kernel, values)
    }

    pub fn uniform(kernel: Kernel, globals: &[f64], xi: f64, eta: f64) -> Result<Self> {
        let p = kernel.p();
        ParameterSet::from_blocks(kernel, globals, &vec![xi; p], &vec![eta; p])
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn index(&self) -> ParameterIndex {
        ParameterIndex::for_kernel(self.kernel)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn globals(&self) -> &[f64] {
        &self.values[..self.kernel.num_globals()]
    }

    pub fn xi(&self) -> &[f64] {
        self.node_block(self.kernel.xi_offset())
    }

    pub fn eta(&self) -> &[f64] {
        self.node_block(self.kernel.eta_offset())
    }

    fn node_block(&self, off: usize) -> &[f64] {
        if self.kernel.id().has_node_params() {
            &self.values[off..off + self.kernel.p()]
        } else {
            &[]
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.kernel.param_names()
    }
}

/// Either one value shared by every node or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeValues {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl NodeValues {
    pub fn expand(&self, p: usize) -> Result<Vec<f64>> {
        match self {
            NodeValues::Constant(c) => Ok(vec![*c; p]),
            NodeValues::PerNode(v) if v.len() == p => Ok(v.clone()),
            NodeValues::PerNode(v) => Err(ArnetError::InvalidArgument(format!(
                "expected {p} node values, got {}",
                v.len()
            ))),
        }
    }
}

/// Serializable description of a parameter vector, as written in configs.
///
/// `globals` maps names (`a`, `b`, `a0`, ...) to values. For `edgewise_ar`
/// the per-pair vectors go in `values` (the full vector in layout order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    #[serde(default)]
    pub globals: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<NodeValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<NodeValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl ParamSpec {
    pub fn resolve(&self, kernel: Kernel) -> Result<ParameterSet> {
        if let Some(v) = &self.values {
            return ParameterSet::new(kernel, v.clone());
        }
        let names = kernel.id().global_names();
        for key in self.globals.keys() {
            if !names.contains(&key.as_str()) {
                return Err(ArnetError::InvalidArgument(format!(
                    "unknown global parameter `{key}` for kernel {}",
                    kernel.id()
                )));
            }
        }
        let globals = names
            .iter()
            .map(|n| {
                self.globals.get(*n).copied().ok_or_else(|| {
                    ArnetError::InvalidArgument(format!(
                        "missing global parameter `{n}` for kernel {}",
                        kernel.id()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !kernel.id().has_node_params() {
            return ParameterSet::from_blocks(kernel, &globals, &[], &[]);
        }
        let p = kernel.p();
        let missing = |n: &str| ArnetError::InvalidArgument(format!("missing `{n}` values"));
        let xi = self.xi.as_ref().ok_or_else(|| missing("xi"))?.expand(p)?;
        let eta = self.eta.as_ref().ok_or_else(|| missing("eta"))?.expand(p)?;
        ParameterSet::from_blocks(kernel, &globals, &xi, &eta)
    }

    pub fn from_set(set: &ParameterSet) -> Self {
        let k = set.kernel();
        if k.id() == KernelId::EdgewiseAr {
            return ParamSpec {
                globals: BTreeMap::new(),
                xi: None,
                eta: None,
                values: Some(set.values().to_vec()),
            };
        }
        let globals = k
            .id()
            .global_names()
            .iter()
            .zip(set.globals())
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        let node = |v: &[f64]| (!v.is_empty()).then(|| NodeValues::PerNode(v.to_vec()));
        ParamSpec {
            globals,
            xi: node(set.xi()),
            eta: node(set.eta()),
            values: None,
        }
    }
}
