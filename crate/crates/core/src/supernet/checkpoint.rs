//! Super-network checkpoints: one weight file holding every proxy and
//! learned net, plus a JSON sidecar with the logits, parameters and the
//! surviving slots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{SearchModules, Step, SuperNet};
use crate::error::{Error, Result};
use crate::modules::{LearnedKind, LearnedModules, ModuleId};
use crate::nn::ConvNet;
use crate::proxy::{ProxyNet, ProxySet};
use crate::weights::{self, WeightTensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetEntry {
    name: String,
    tensors: usize,
    trained_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    steps: Vec<Step>,
    latency: BTreeMap<ModuleId, f64>,
    nets: Vec<NetEntry>,
}

pub fn sidecar_path(weights_path: &Path) -> PathBuf {
    weights_path.with_extension("json")
}

/// Writes `path` (weights) and `path` with a `.json` extension (sidecar).
pub fn save_checkpoint(net: &SuperNet, path: &Path) -> Result<()> {
    let mut tensors: Vec<WeightTensor> = Vec::new();
    let mut nets = Vec::new();
    for p in &net.modules.proxies.nets {
        let t = p.net.to_weight_tensors();
        nets.push(NetEntry { name: p.module.to_string(), tensors: t.len(), trained_steps: p.trained_steps });
        tensors.extend(t);
    }
    for kind in LearnedKind::ALL {
        if let Some(n) = net.modules.learned.get(kind) {
            let t = n.to_weight_tensors();
            nets.push(NetEntry { name: kind.as_str().into(), tensors: t.len(), trained_steps: 0 });
            tensors.extend(t);
        }
    }
    weights::save(path, &tensors)?;
    let sidecar = Sidecar { version: 1, steps: net.steps.clone(), latency: net.latency.clone(), nets };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SuperNet> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingFile(side));
    }
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
    let tensors = weights::load(path)?;
    let mut proxies = ProxySet::default();
    let mut learned = LearnedModules::empty();
    let mut offset = 0;
    for entry in &sidecar.nets {
        let slice = tensors.get(offset..offset + entry.tensors).ok_or_else(|| Error::Parse {
            what: "checkpoint",
            offset,
            detail: format!("sidecar lists more tensors than {} holds", path.display()),
        })?;
        offset += entry.tensors;
        let net = ConvNet::from_weight_tensors(slice)?;
        match LearnedKind::ALL.iter().find(|k| k.as_str() == entry.name) {
            Some(&kind) => learned.set(kind, net)?,
            None => {
                let module: ModuleId = entry.name.parse()?;
                proxies.insert(ProxyNet::from_net(module, net, entry.trained_steps)?);
            }
        }
    }
    let mut net = SuperNet {
        steps: sidecar.steps,
        modules: SearchModules { proxies, learned },
        latency: sidecar.latency,
    };
    for s in net.steps.iter().flat_map(|s| &s.slots) {
        net.modules.check_available(s.module)?;
    }
    net.steps.shrink_to_fit();
    Ok(net)
}
