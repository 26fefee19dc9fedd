#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use ddsim::dsl::Path;
use ddsim::memory::SimAddress;
use ddsim::sim::{run_source, Options, Simulation};
use rand::Rng;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// (stem, source) for every corpus scenario, sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "dds"))
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            (stem, std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

pub fn corpus_source(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(format!("{name}.dds"))).unwrap()
}

pub fn run(src: &str) -> Simulation {
    run_with(src, Options::default())
}

pub fn run_with(src: &str, options: Options) -> Simulation {
    match run_source("test", src, options) {
        Ok(sim) => sim,
        Err(e) => panic!("scenario failed to load: {e}\n{src}"),
    }
}

/// `a.b[2].c` -> Path
pub fn path(text: &str) -> Path {
    let mut out: Option<Path> = None;
    for seg in text.split('.') {
        let (name, indices) = seg.split_once('[').unwrap_or((seg, ""));
        let mut p = match out {
            None => Path::var(name),
            Some(p) => p.field(name),
        };
        for idx in indices.split('[').filter(|i| !i.is_empty()) {
            p = p.index(idx.trim_end_matches(']').parse().unwrap());
        }
        out = Some(p);
    }
    out.unwrap()
}

pub fn codes(sim: &Simulation) -> Vec<&'static str> {
    sim.diagnostics.iter().map(|d| d.code.as_str()).collect()
}

/// Host address of the pointer slot at `p` and the value it holds.
pub fn host_slot(sim: &Simulation, p: &str) -> (SimAddress, SimAddress) {
    let place = sim.vars.resolve(&path(p), &sim.scenario.types, &sim.mem).unwrap();
    (place.addr, SimAddress(sim.mem.read_u64(place.addr).unwrap()))
}

/// Value held by the device copy of the pointer slot at `p`.
pub fn device_slot(sim: &Simulation, p: &str) -> SimAddress {
    let (site, _) = host_slot(sim, p);
    let dev = sim.env.translate(site).expect("slot is inside a mapping");
    SimAddress(sim.mem.read_u64(dev).unwrap())
}

// ---- random tree-shaped type graphs ----

#[derive(Debug, Clone)]
pub enum GenMember {
    Int { name: String, value: i64 },
    Real { name: String },
    /// Shaped pointer; `count` names an int sibling or is a constant.
    Shaped { name: String, count: Result<String, u64>, factor: u64 },
    RecPtr { name: String, child: usize },
    Embed { name: String, child: usize },
}

impl GenMember {
    pub fn name(&self) -> &str {
        match self {
            GenMember::Int { name, .. }
            | GenMember::Real { name }
            | GenMember::Shaped { name, .. }
            | GenMember::RecPtr { name, .. }
            | GenMember::Embed { name, .. } => name,
        }
    }

    pub fn is_pointer(&self) -> bool {
        matches!(self, GenMember::Shaped { .. } | GenMember::RecPtr { .. })
    }
}

#[derive(Debug, Clone)]
pub struct GenType {
    pub name: String,
    pub members: Vec<GenMember>,
}

/// A tree of types (each used exactly once), rooted at `types[0]`.
#[derive(Debug, Clone)]
pub struct TypeGraph {
    pub types: Vec<GenType>,
}

/// One pointer member reachable from the root, with the instance path of its
/// slot and the pointer members above it.
#[derive(Debug, Clone)]
pub struct PointerSite {
    pub ty: usize,
    pub member: String,
    pub path: String,
    pub ancestors: Vec<(usize, String)>,
    pub is_record: bool,
}

impl TypeGraph {
    /// Depth at most 4 levels, at most 12 members per type, every shape in
    /// 1..=8 elements. Member 0 is always an int so records have a scalar
    /// to read.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut g = TypeGraph { types: Vec::new() };
        g.gen_type(rng, 0);
        g
    }

    fn gen_type(&mut self, rng: &mut impl Rng, depth: usize) -> usize {
        let idx = self.types.len();
        self.types.push(GenType {
            name: format!("T{idx}"),
            members: Vec::new(),
        });
        let n_members = rng.gen_range(1..=12);
        let mut members = vec![GenMember::Int {
            name: "m0".into(),
            value: rng.gen_range(1..=8),
        }];
        for i in 1..n_members {
            let name = format!("m{i}");
            let roll = rng.gen_range(0..10);
            let m = match roll {
                0 | 1 => GenMember::Int {
                    name,
                    value: rng.gen_range(1..=4),
                },
                2 => GenMember::Real { name },
                3..=5 => {
                    let ints: Vec<(String, i64)> = members
                        .iter()
                        .filter_map(|m| match m {
                            GenMember::Int { name, value } => Some((name.clone(), *value)),
                            _ => None,
                        })
                        .collect();
                    if rng.gen_bool(0.5) {
                        let (n, v) = ints[rng.gen_range(0..ints.len())].clone();
                        let factor = if v <= 4 && rng.gen_bool(0.5) { 2 } else { 1 };
                        GenMember::Shaped {
                            name,
                            count: Ok(n),
                            factor,
                        }
                    } else {
                        GenMember::Shaped {
                            name,
                            count: Err(rng.gen_range(1..=8)),
                            factor: 1,
                        }
                    }
                }
                6..=8 if depth < 3 && self.types.len() < 16 => {
                    let child = self.gen_type(rng, depth + 1);
                    GenMember::RecPtr { name, child }
                }
                9 if depth < 3 && self.types.len() < 16 => {
                    let child = self.gen_type(rng, depth + 1);
                    GenMember::Embed { name, child }
                }
                _ => GenMember::Real { name },
            };
            members.push(m);
        }
        self.types[idx].members = members;
        idx
    }

    pub fn type_decls(&self) -> String {
        let mut s = String::new();
        for t in &self.types {
            let _ = writeln!(s, "type {} {{", t.name);
            for m in &t.members {
                let ty = match m {
                    GenMember::Int { .. } => "int".to_string(),
                    GenMember::Real { .. } => "real".to_string(),
                    GenMember::Shaped { count, factor, .. } => {
                        let c = match count {
                            Ok(n) => n.clone(),
                            Err(k) => k.to_string(),
                        };
                        if *factor == 1 {
                            format!("ptr real[{c}]")
                        } else {
                            format!("ptr real[{c}*{factor}]")
                        }
                    }
                    GenMember::RecPtr { child, .. } => format!("ptr {}", self.types[*child].name),
                    GenMember::Embed { child, .. } => self.types[*child].name.clone(),
                };
                let _ = writeln!(s, "  {}: {ty};", m.name());
            }
            let _ = writeln!(s, "}}");
        }
        s
    }

    /// Declarations and statements that build a fully populated instance
    /// rooted at variable `root`.
    pub fn populate(&self, root: &str) -> String {
        let mut s = format!("var {root}: {};\n", self.types[0].name);
        let mut next_var = 0;
        self.fill(0, root, &mut s, &mut next_var);
        s
    }

    fn fill(&self, ty: usize, at: &str, s: &mut String, next_var: &mut usize) {
        for m in &self.types[ty].members {
            match m {
                GenMember::Int { name, value } => {
                    let _ = writeln!(s, "{at}.{name} = {value};");
                }
                GenMember::Real { .. } => {}
                GenMember::Shaped { name, .. } => {
                    let _ = writeln!(s, "alloc {at}.{name};");
                }
                GenMember::RecPtr { name, child } => {
                    let v = format!("v{next_var}");
                    *next_var += 1;
                    let _ = writeln!(s, "var {v}: {};", self.types[*child].name);
                    let _ = writeln!(s, "{at}.{name} = &{v};");
                    self.fill(*child, &v, s, next_var);
                }
                GenMember::Embed { name, child } => self.fill(*child, &format!("{at}.{name}"), s, next_var),
            }
        }
    }

    /// Every pointer slot reachable from `root`, in declaration order.
    pub fn pointer_sites(&self, root: &str) -> Vec<PointerSite> {
        let mut out = Vec::new();
        self.sites(0, root, &[], &mut out);
        out
    }

    fn sites(&self, ty: usize, at: &str, ancestors: &[(usize, String)], out: &mut Vec<PointerSite>) {
        for m in &self.types[ty].members {
            let p = format!("{at}.{}", m.name());
            match m {
                GenMember::Shaped { .. } => out.push(PointerSite {
                    ty,
                    member: m.name().into(),
                    path: p,
                    ancestors: ancestors.to_vec(),
                    is_record: false,
                }),
                GenMember::RecPtr { child, .. } => {
                    out.push(PointerSite {
                        ty,
                        member: m.name().into(),
                        path: p.clone(),
                        ancestors: ancestors.to_vec(),
                        is_record: true,
                    });
                    let mut below = ancestors.to_vec();
                    below.push((ty, m.name().into()));
                    self.sites(*child, &p, &below, out);
                }
                GenMember::Embed { child, .. } => self.sites(*child, &p, ancestors, out),
                _ => {}
            }
        }
    }

    /// Picks up to `k` pointer sites to exclude such that none lies below
    /// another excluded record pointer, so each exclusion leaves exactly one
    /// slot untranslated.
    pub fn pick_exclusions(&self, rng: &mut impl Rng, k: usize) -> Vec<PointerSite> {
        let mut sites = self.pointer_sites("r");
        let mut chosen: Vec<PointerSite> = Vec::new();
        while chosen.len() < k && !sites.is_empty() {
            let s = sites.swap_remove(rng.gen_range(0..sites.len()));
            let below_chosen = chosen
                .iter()
                .any(|c| c.is_record && s.ancestors.contains(&(c.ty, c.member.clone())));
            let above_chosen = s.is_record
                && chosen
                    .iter()
                    .any(|c| c.ancestors.contains(&(s.ty, s.member.clone())));
            if !below_chosen && !above_chosen {
                chosen.push(s);
            }
        }
        chosen
    }

    pub fn exclusion_policies(excluded: &[PointerSite], types: &[GenType]) -> String {
        let mut s = String::new();
        for (i, t) in types.iter().enumerate() {
            let names: Vec<&str> = excluded.iter().filter(|e| e.ty == i).map(|e| e.member.as_str()).collect();
            if !names.is_empty() {
                let _ = writeln!(s, "policy {}::* {{ exclude({}); }}", t.name, names.join(", "));
            }
        }
        s
    }
}
