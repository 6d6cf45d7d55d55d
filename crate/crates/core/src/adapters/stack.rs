use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::ModelGeometry;
use crate::linalg::{zero_init, Matrix, RngState, Vector};

use super::config::{AdapterConfig, AdapterMethod, ProjectionTag};
use super::frozen::FrozenLinear;
use super::lora::{lora_forward, LoraAdapter};
use super::moelora::{moelora_delta, moelora_forward, MoeLoraLayer};
use super::talklora::{talklora_delta, talklora_forward, TalkLoraLayer, UpProjections};
use super::ForwardTrace;

/// Cross-layer shared up-projections, one set of `n` matrices `B_i (k×r_e)`
/// per projection tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SharedProjectionStore {
    entries: BTreeMap<ProjectionTag, Vec<Matrix>>,
}

impl SharedProjectionStore {
    pub fn get(&self, tag: ProjectionTag) -> Option<&[Matrix]> {
        self.entries.get(&tag).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, tag: ProjectionTag) -> Option<&mut Vec<Matrix>> {
        self.entries.get_mut(&tag)
    }

    pub fn insert(&mut self, tag: ProjectionTag, b: Vec<Matrix>) {
        self.entries.insert(tag, b);
    }

    pub fn tags(&self) -> impl Iterator<Item = ProjectionTag> + '_ {
        self.entries.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiteAdapter {
    Lora(LoraAdapter),
    MoeLora(MoeLoraLayer),
    TalkLora(TalkLoraLayer),
}

/// One adapted projection: layer index, projection tag and its adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSite {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub d_in: usize,
    pub d_out: usize,
    pub adapter: SiteAdapter,
}

impl AdapterSite {
    pub fn talklora(&self) -> Option<&TalkLoraLayer> {
        match &self.adapter {
            SiteAdapter::TalkLora(t) => Some(t),
            _ => None,
        }
    }
}

/// Owner of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamOwner {
    Site { layer: usize, tag: ProjectionTag },
    Shared(ProjectionTag),
}

/// Role of a trainable tensor inside its owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    LoraA,
    LoraB,
    A(usize),
    E(usize),
    B(usize),
    C,
    Router,
}

impl ParamRole {
    /// Budget bucket this role is counted under.
    pub fn bucket(self) -> &'static str {
        match self {
            ParamRole::LoraA => "lora_A",
            ParamRole::LoraB => "lora_B",
            ParamRole::A(_) => "A",
            ParamRole::E(_) => "E",
            ParamRole::B(_) => "B",
            ParamRole::C => "C",
            ParamRole::Router => "router",
        }
    }
}

/// Stable name of a trainable tensor, e.g. `layer1.Q.A[0]` or `shared.Up.B[3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamHandle {
    pub owner: ParamOwner,
    pub role: ParamRole,
}

impl ParamHandle {
    pub fn site(layer: usize, tag: ProjectionTag, role: ParamRole) -> Self {
        Self {
            owner: ParamOwner::Site { layer, tag },
            role,
        }
    }

    pub fn shared(tag: ProjectionTag, expert: usize) -> Self {
        Self {
            owner: ParamOwner::Shared(tag),
            role: ParamRole::B(expert),
        }
    }
}

impl fmt::Display for ParamHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.owner {
            ParamOwner::Site { layer, tag } => write!(f, "layer{layer}.{tag}.")?,
            ParamOwner::Shared(tag) => write!(f, "shared.{tag}.")?,
        }
        match self.role {
            ParamRole::LoraA => f.write_str("lora_A"),
            ParamRole::LoraB => f.write_str("lora_B"),
            ParamRole::A(i) => write!(f, "A[{i}]"),
            ParamRole::E(i) => write!(f, "E[{i}]"),
            ParamRole::B(i) => write!(f, "B[{i}]"),
            ParamRole::C => f.write_str("C"),
            ParamRole::Router => f.write_str("W_g"),
        }
    }
}

impl FromStr for ParamHandle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("handle", format!("malformed parameter handle `{s}`"));
        let mut parts = s.splitn(3, '.');
        let (owner, tag, role) = match (parts.next(), parts.next(), parts.next()) {
            (Some(o), Some(t), Some(r)) => (o, t, r),
            _ => return Err(bad()),
        };
        let tag: ProjectionTag = tag.parse()?;
        let owner = if owner == "shared" {
            ParamOwner::Shared(tag)
        } else {
            let layer = owner
                .strip_prefix("layer")
                .and_then(|l| l.parse().ok())
                .ok_or_else(bad)?;
            ParamOwner::Site { layer, tag }
        };
        let indexed = |prefix: &str| -> Option<usize> {
            role.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok()
        };
        let role = match role {
            "lora_A" => ParamRole::LoraA,
            "lora_B" => ParamRole::LoraB,
            "C" => ParamRole::C,
            "W_g" => ParamRole::Router,
            _ => {
                if let Some(i) = indexed("A[") {
                    ParamRole::A(i)
                } else if let Some(i) = indexed("E[") {
                    ParamRole::E(i)
                } else if let Some(i) = indexed("B[") {
                    ParamRole::B(i)
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(ParamHandle { owner, role })
    }
}

impl Serialize for ParamHandle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamHandle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Shape-only description of a site, used to rebuild a stack skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub layer: usize,
    pub tag: ProjectionTag,
    pub d_in: usize,
    pub d_out: usize,
}

/// All adapters attached to a host model, plus the shared `B` store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterStack {
    method: AdapterMethod,
    config: AdapterConfig,
    sites: Vec<AdapterSite>,
    store: SharedProjectionStore,
}

/// Builds one adapter per `(layer, target)` in layer-major, tag order.
///
/// Site `s` draws its parameters from `rng.fork(s)`, so the draws of one
/// site do not depend on what other sites (or other families) consume.
/// TalkLoRA with `share_b` allocates one zero `B` set per target tag in the
/// shared store; LoRA and MoELoRA always own their `B`.
pub fn build_adapter_stack(
    geom: &ModelGeometry,
    method: AdapterMethod,
    cfg: &AdapterConfig,
    targets: &[ProjectionTag],
    rng: &RngState,
) -> Result<AdapterStack> {
    geom.validate()?;
    let dims = geom.target_dims(targets)?;
    let specs: Vec<SiteSpec> = (0..geom.layers)
        .flat_map(|layer| {
            dims.iter().map(move |d| SiteSpec {
                layer,
                tag: d.tag,
                d_in: d.d_in,
                d_out: d.d_out,
            })
        })
        .collect();
    AdapterStack::build(method, cfg, &specs, Some(rng))
}

impl AdapterStack {
    /// Builds from explicit site specs. Without an rng every tensor is zero
    /// (a skeleton to be filled, e.g. by a checkpoint loader).
    pub fn build(
        method: AdapterMethod,
        cfg: &AdapterConfig,
        specs: &[SiteSpec],
        rng: Option<&RngState>,
    ) -> Result<Self> {
        cfg.validate()?;
        if specs.is_empty() {
            return Err(Error::config("targets", "no adapter sites"));
        }
        let (n, re) = (cfg.experts, cfg.expert_rank());
        let share = method == AdapterMethod::TalkLora && cfg.share_b;
        let mut store = SharedProjectionStore::default();
        let mut sites = Vec::with_capacity(specs.len());
        for (idx, spec) in specs.iter().enumerate() {
            cfg.validate_for(spec.d_in, spec.d_out)?;
            if sites
                .iter()
                .any(|s: &AdapterSite| s.layer == spec.layer && s.tag == spec.tag)
            {
                return Err(Error::config(
                    "sites",
                    format!("duplicate site layer{}.{}", spec.layer, spec.tag),
                ));
            }
            let mut site_rng = rng.map(|r| r.fork(idx as u64));
            let adapter = match method {
                AdapterMethod::Lora => SiteAdapter::Lora(match site_rng.as_mut() {
                    Some(r) => LoraAdapter::new(spec.d_in, spec.d_out, cfg, r)?,
                    None => LoraAdapter {
                        a: zero_init(cfg.rank, spec.d_in),
                        b: zero_init(spec.d_out, cfg.rank),
                    },
                }),
                AdapterMethod::MoeLora => SiteAdapter::MoeLora(match site_rng.as_mut() {
                    Some(r) => MoeLoraLayer::new(spec.d_in, spec.d_out, cfg, r)?,
                    None => MoeLoraLayer {
                        a: vec![zero_init(re, spec.d_in); n],
                        b: vec![zero_init(spec.d_out, re); n],
                        router: zero_init(n, spec.d_in),
                    },
                }),
                AdapterMethod::TalkLora => {
                    let b = if share {
                        match store.get(spec.tag) {
                            Some(existing) => {
                                if existing[0].rows() != spec.d_out {
                                    return Err(Error::config(
                                        "share_b",
                                        format!("{} output dims differ across layers", spec.tag),
                                    ));
                                }
                            }
                            None => store.insert(spec.tag, vec![zero_init(spec.d_out, re); n]),
                        }
                        UpProjections::Shared(spec.tag)
                    } else {
                        UpProjections::Owned(vec![zero_init(spec.d_out, re); n])
                    };
                    SiteAdapter::TalkLora(match site_rng.as_mut() {
                        Some(r) => TalkLoraLayer::new(spec.d_in, spec.d_out, cfg, b, r)?,
                        None => TalkLoraLayer {
                            a: vec![zero_init(re, spec.d_in); n],
                            e: vec![zero_init(re, re); n],
                            b,
                            c: zero_init(n, n),
                            router: zero_init(n, cfg.rank),
                        },
                    })
                }
            };
            sites.push(AdapterSite {
                layer: spec.layer,
                tag: spec.tag,
                d_in: spec.d_in,
                d_out: spec.d_out,
                adapter,
            });
        }
        Ok(Self {
            method,
            config: cfg.clone(),
            sites,
            store,
        })
    }

    pub fn method(&self) -> AdapterMethod {
        self.method
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn sites(&self) -> &[AdapterSite] {
        &self.sites
    }

    pub fn sites_mut(&mut self) -> &mut [AdapterSite] {
        &mut self.sites
    }

    pub fn site_specs(&self) -> Vec<SiteSpec> {
        self.sites
            .iter()
            .map(|s| SiteSpec {
                layer: s.layer,
                tag: s.tag,
                d_in: s.d_in,
                d_out: s.d_out,
            })
            .collect()
    }

    pub fn store(&self) -> &SharedProjectionStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut SharedProjectionStore {
        &mut self.store
    }

    pub fn site_index(&self, layer: usize, tag: ProjectionTag) -> Option<usize> {
        self.sites.iter().position(|s| s.layer == layer && s.tag == tag)
    }

    /// Enables or disables expert communication on every site.
    pub fn set_talking(&mut self, enabled: bool) {
        self.config.talking_enabled = enabled;
    }

    pub fn set_spectral_clip(&mut self, clip: Option<f64>) {
        self.config.spectral_clip_c = clip;
    }

    /// Inference forward of one site on input `x`.
    pub fn forward_site(
        &self,
        idx: usize,
        layer: &FrozenLinear,
        x: &[f64],
    ) -> Result<(Vector, Option<ForwardTrace>)> {
        let site = &self.sites[idx];
        match &site.adapter {
            SiteAdapter::Lora(ad) => Ok((lora_forward(layer, ad, x, &self.config)?, None)),
            SiteAdapter::MoeLora(ml) => {
                let (y, t) = moelora_forward(layer, ml, x, &self.config)?;
                Ok((y, Some(t)))
            }
            SiteAdapter::TalkLora(tl) => {
                let (y, t) = talklora_forward(layer, tl, &self.store, x, &self.config)?;
                Ok((y, Some(t)))
            }
        }
    }

    /// Adapter contribution of one site at input `x` (no frozen term).
    pub fn adapter_delta(&self, idx: usize, x: &[f64]) -> Result<(Vector, Option<ForwardTrace>)> {
        let site = &self.sites[idx];
        match &site.adapter {
            SiteAdapter::Lora(ad) => Ok((ad.delta(x, &self.config)?, None)),
            SiteAdapter::MoeLora(ml) => {
                let t = moelora_delta(ml, x, &self.config)?;
                Ok((t.delta.clone(), Some(t)))
            }
            SiteAdapter::TalkLora(tl) => {
                let t = talklora_delta(tl, tl.b.resolve(&self.store)?, x, &self.config)?;
                Ok((t.delta.clone(), Some(t)))
            }
        }
    }

    /// Every trainable tensor, sites first (in site order), then the shared
    /// store. `C` is omitted when talking is disabled.
    pub fn param_handles(&self) -> Vec<ParamHandle> {
        let mut out = Vec::new();
        for site in &self.sites {
            let h = |role| ParamHandle::site(site.layer, site.tag, role);
            match &site.adapter {
                SiteAdapter::Lora(_) => {
                    out.push(h(ParamRole::LoraA));
                    out.push(h(ParamRole::LoraB));
                }
                SiteAdapter::MoeLora(ml) => {
                    out.extend((0..ml.experts()).map(|i| h(ParamRole::A(i))));
                    out.extend((0..ml.experts()).map(|i| h(ParamRole::B(i))));
                    out.push(h(ParamRole::Router));
                }
                SiteAdapter::TalkLora(tl) => {
                    out.extend((0..tl.experts()).map(|i| h(ParamRole::A(i))));
                    out.extend((0..tl.experts()).map(|i| h(ParamRole::E(i))));
                    if !tl.b.is_shared() {
                        out.extend((0..tl.experts()).map(|i| h(ParamRole::B(i))));
                    }
                    if self.config.talking_enabled {
                        out.push(h(ParamRole::C));
                    }
                    out.push(h(ParamRole::Router));
                }
            }
        }
        for (tag, b) in &self.store.entries {
            out.extend((0..b.len()).map(|i| ParamHandle::shared(*tag, i)));
        }
        out
    }

    pub fn param(&self, handle: &ParamHandle) -> Option<&Matrix> {
        match handle.owner {
            ParamOwner::Shared(tag) => match handle.role {
                ParamRole::B(i) => self.store.get(tag)?.get(i),
                _ => None,
            },
            ParamOwner::Site { layer, tag } => {
                let site = &self.sites[self.site_index(layer, tag)?];
                match (&site.adapter, handle.role) {
                    (SiteAdapter::Lora(ad), ParamRole::LoraA) => Some(&ad.a),
                    (SiteAdapter::Lora(ad), ParamRole::LoraB) => Some(&ad.b),
                    (SiteAdapter::MoeLora(ml), ParamRole::A(i)) => ml.a.get(i),
                    (SiteAdapter::MoeLora(ml), ParamRole::B(i)) => ml.b.get(i),
                    (SiteAdapter::MoeLora(ml), ParamRole::Router) => Some(&ml.router),
                    (SiteAdapter::TalkLora(tl), ParamRole::A(i)) => tl.a.get(i),
                    (SiteAdapter::TalkLora(tl), ParamRole::E(i)) => tl.e.get(i),
                    (SiteAdapter::TalkLora(tl), ParamRole::B(i)) => match &tl.b {
                        UpProjections::Owned(b) => b.get(i),
                        UpProjections::Shared(_) => None,
                    },
                    (SiteAdapter::TalkLora(tl), ParamRole::C) => Some(&tl.c),
                    (SiteAdapter::TalkLora(tl), ParamRole::Router) => Some(&tl.router),
                    _ => None,
                }
            }
        }
    }

    pub fn param_mut(&mut self, handle: &ParamHandle) -> Option<&mut Matrix> {
        match handle.owner {
            ParamOwner::Shared(tag) => match handle.role {
                ParamRole::B(i) => self.store.get_mut(tag)?.get_mut(i),
                _ => None,
            },
            ParamOwner::Site { layer, tag } => {
                let idx = self.site_index(layer, tag)?;
                let site = &mut self.sites[idx];
                match (&mut site.adapter, handle.role) {
                    (SiteAdapter::Lora(ad), ParamRole::LoraA) => Some(&mut ad.a),
                    (SiteAdapter::Lora(ad), ParamRole::LoraB) => Some(&mut ad.b),
                    (SiteAdapter::MoeLora(ml), ParamRole::A(i)) => ml.a.get_mut(i),
                    (SiteAdapter::MoeLora(ml), ParamRole::B(i)) => ml.b.get_mut(i),
                    (SiteAdapter::MoeLora(ml), ParamRole::Router) => Some(&mut ml.router),
                    (SiteAdapter::TalkLora(tl), ParamRole::A(i)) => tl.a.get_mut(i),
                    (SiteAdapter::TalkLora(tl), ParamRole::E(i)) => tl.e.get_mut(i),
                    (SiteAdapter::TalkLora(tl), ParamRole::B(i)) => match &mut tl.b {
                        UpProjections::Owned(b) => b.get_mut(i),
                        UpProjections::Shared(_) => None,
                    },
                    (SiteAdapter::TalkLora(tl), ParamRole::C) => Some(&mut tl.c),
                    (SiteAdapter::TalkLora(tl), ParamRole::Router) => Some(&mut tl.router),
                    _ => None,
                }
            }
        }
    }

    /// Resolved `B_i` of a TalkLoRA site.
    pub fn up_projections(&self, idx: usize) -> Result<&[Matrix]> {
        match &self.sites[idx].adapter {
            SiteAdapter::TalkLora(tl) => tl.b.resolve(&self.store),
            SiteAdapter::MoeLora(ml) => Ok(&ml.b),
            SiteAdapter::Lora(ad) => Ok(std::slice::from_ref(&ad.b)),
        }
    }

    /// Number of trainable scalars, by walking every allocated tensor.
    pub fn trainable_count(&self) -> u64 {
        self.param_handles()
            .iter()
            .map(|h| self.param(h).map_or(0, Matrix::len) as u64)
            .sum()
    }

    /// Trainable scalars per budget bucket (see [`ParamRole::bucket`]).
    pub fn trainable_breakdown(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for h in self.param_handles() {
            let len = self.param(&h).map_or(0, Matrix::len) as u64;
            *out.entry(h.role.bucket().to_string()).or_insert(0) += len;
        }
        out
    }

    /// Alias table: for every TalkLoRA site, the shared tag it resolves to.
    pub fn alias_table(&self) -> Vec<(usize, ProjectionTag, Option<ProjectionTag>)> {
        self.sites
            .iter()
            .filter_map(|s| match &s.adapter {
                SiteAdapter::TalkLora(tl) => Some((
                    s.layer,
                    s.tag,
                    match tl.b {
                        UpProjections::Shared(t) => Some(t),
                        UpProjections::Owned(_) => None,
                    },
                )),
                _ => None,
            })
            .collect()
    }
}
