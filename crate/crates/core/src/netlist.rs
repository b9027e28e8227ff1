//! Genetic encoding of component networks and decoding into netlists.
//!
//! A chromosome is a fixed-length sequence of genes; each gene names a
//! component kind, its two connecting nodes, an index into the value
//! catalog, and an active bit. Inactive and self-loop genes carry no
//! electrical meaning but stay in the chromosome so that crossover and
//! mutation remain closed over a constant-length encoding.

use crate::sampling::Interval;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("catalog for {kind:?} must list at least one value")]
    EmptyCatalog { kind: ComponentKind },
    #[error("catalog range for {kind:?} must satisfy low < high")]
    BadCatalogRange { kind: ComponentKind },
    #[error("chromosome needs max_nodes >= 3, got {0}")]
    TooFewNodes(usize),
    #[error("chromosome needs max_components >= 1")]
    NoComponents,
    #[error("netlist parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Component kinds. Voltage sources appear only in the fixed scaffold,
/// never inside a gene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Resistor,
    Capacitor,
    Inductor,
    VoltageSource,
}

impl ComponentKind {
    /// Kinds a gene may take.
    pub const EVOLVABLE: [ComponentKind; 3] = [
        ComponentKind::Resistor,
        ComponentKind::Capacitor,
        ComponentKind::Inductor,
    ];

    pub fn letter(&self) -> char {
        match self {
            ComponentKind::Resistor => 'R',
            ComponentKind::Capacitor => 'C',
            ComponentKind::Inductor => 'L',
            ComponentKind::VoltageSource => 'V',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'R' => Some(ComponentKind::Resistor),
            'C' => Some(ComponentKind::Capacitor),
            'L' => Some(ComponentKind::Inductor),
            'V' => Some(ComponentKind::VoltageSource),
            _ => None,
        }
    }
}

/// Permissible values for one evolvable kind: the discrete list used by
/// the genetic search and the continuous range used for fine-tuning.
/// The two need not agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub values: Vec<f64>,
    pub range: Interval,
}

/// Per-kind component value catalog (SI units: ohm, farad, henry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCatalog {
    pub resistor: CatalogEntry,
    pub capacitor: CatalogEntry,
    pub inductor: CatalogEntry,
}

impl ComponentCatalog {
    pub fn validate(&self) -> Result<(), NetlistError> {
        for kind in ComponentKind::EVOLVABLE {
            let entry = self.entry(kind);
            if entry.values.is_empty() {
                return Err(NetlistError::EmptyCatalog { kind });
            }
            if entry.range.lo >= entry.range.hi {
                return Err(NetlistError::BadCatalogRange { kind });
            }
        }
        Ok(())
    }

    pub fn entry(&self, kind: ComponentKind) -> &CatalogEntry {
        match kind {
            ComponentKind::Resistor => &self.resistor,
            ComponentKind::Capacitor => &self.capacitor,
            ComponentKind::Inductor => &self.inductor,
            ComponentKind::VoltageSource => panic!("voltage sources are not cataloged"),
        }
    }
}

/// One gene: a component slot in the chromosome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gene {
    pub kind: ComponentKind,
    pub node_a: usize,
    pub node_b: usize,
    pub value_index: usize,
    pub active: bool,
}

impl Gene {
    pub fn is_self_loop(&self) -> bool {
        self.node_a == self.node_b
    }

    /// Active and electrically meaningful.
    pub fn is_live(&self) -> bool {
        self.active && !self.is_self_loop()
    }

    fn touches(&self, node: usize) -> bool {
        self.node_a == node || self.node_b == node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Random,
    Child,
}

/// Fixed-length genetic encoding of a component network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<Gene>,
    pub origin: Origin,
}

impl Chromosome {
    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

/// Count of active, non-self-loop genes.
pub fn active_count(chromosome: &Chromosome) -> usize {
    chromosome.genes.iter().filter(|g| g.is_live()).count()
}

impl fmt::Display for Chromosome {
    /// Two-row record: top row gene fields, bottom row active bits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let top: Vec<String> = self
            .genes
            .iter()
            .map(|g| format!("{} {} {} {}", g.kind.letter(), g.node_a, g.node_b, g.value_index))
            .collect();
        let bottom: Vec<String> = self
            .genes
            .iter()
            .map(|g| if g.active { "1".into() } else { "0".into() })
            .collect();
        writeln!(f, "{}", top.join(" | "))?;
        write!(f, "{}", bottom.join(" | "))
    }
}

impl std::str::FromStr for Chromosome {
    type Err = NetlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let top = lines.next().ok_or(NetlistError::Parse {
            line: 1,
            message: "missing gene row".into(),
        })?;
        let bottom = lines.next().ok_or(NetlistError::Parse {
            line: 2,
            message: "missing active-bit row".into(),
        })?;
        let mut genes = Vec::new();
        let cells: Vec<&str> = top.split('|').map(str::trim).collect();
        let bits: Vec<&str> = bottom.split('|').map(str::trim).collect();
        if cells.len() != bits.len() {
            return Err(NetlistError::Parse {
                line: 2,
                message: format!("{} genes but {} active bits", cells.len(), bits.len()),
            });
        }
        for (i, (cell, bit)) in cells.iter().zip(&bits).enumerate() {
            let parts: Vec<&str> = cell.split_whitespace().collect();
            let err = |message: String| NetlistError::Parse { line: 1, message };
            if parts.len() != 4 {
                return Err(err(format!("gene {i}: expected 4 fields, got {}", parts.len())));
            }
            let kind = ComponentKind::from_letter(parts[0].chars().next().unwrap_or('?'))
                .ok_or_else(|| err(format!("gene {i}: unknown kind {}", parts[0])))?;
            let parse = |s: &str| -> Result<usize, NetlistError> {
                s.parse().map_err(|_| NetlistError::Parse {
                    line: 1,
                    message: format!("gene {i}: bad integer {s}"),
                })
            };
            genes.push(Gene {
                kind,
                node_a: parse(parts[1])?,
                node_b: parse(parts[2])?,
                value_index: parse(parts[3])?,
                active: *bit == "1",
            });
        }
        Ok(Chromosome {
            genes,
            origin: Origin::Seed,
        })
    }
}

/// Fixed terminals shared by every individual in a run. Node 0 is
/// ground by convention; the AC source sits between `source_node` and
/// ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaffold {
    pub max_nodes: usize,
    pub source_node: usize,
    pub output_node: usize,
    pub ground_node: usize,
    pub ac_amplitude: f64,
}

impl Scaffold {
    pub fn terminals(&self) -> [usize; 3] {
        [self.source_node, self.output_node, self.ground_node]
    }
}

/// One decoded component line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub node_a: usize,
    pub node_b: usize,
    pub value: f64,
}

/// Decoded component network ready for simulation. The scaffold source
/// is included as the final component.
#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub components: Vec<Component>,
    pub source_node: usize,
    pub output_node: usize,
    pub ground_node: usize,
}

impl Netlist {
    /// Number of components excluding the scaffold source(s).
    pub fn passive_count(&self) -> usize {
        self.components
            .iter()
            .filter(|c| c.kind != ComponentKind::VoltageSource)
            .count()
    }

    /// Text form, one component per line, with the output node recorded
    /// as a `.out` directive.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut counters = [0usize; 4];
        for c in &self.components {
            let slot = match c.kind {
                ComponentKind::Resistor => 0,
                ComponentKind::Capacitor => 1,
                ComponentKind::Inductor => 2,
                ComponentKind::VoltageSource => 3,
            };
            counters[slot] += 1;
            if c.kind == ComponentKind::VoltageSource {
                out.push_str(&format!(
                    "V{} {} {} AC {}\n",
                    counters[slot], c.node_a, c.node_b, c.value
                ));
            } else {
                out.push_str(&format!(
                    "{}{} {} {} {}\n",
                    c.kind.letter(),
                    counters[slot],
                    c.node_a,
                    c.node_b,
                    c.value
                ));
            }
        }
        out.push_str(&format!(".out {}\n", self.output_node));
        out
    }

    /// Parse the text form. The output node defaults to the highest
    /// non-ground node if no `.out` directive is present.
    pub fn parse(text: &str) -> Result<Self, NetlistError> {
        let mut components = Vec::new();
        let mut out_node = None;
        let mut source_node = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('*') || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix(".out") {
                out_node = Some(rest.trim().parse().map_err(|_| NetlistError::Parse {
                    line: lineno,
                    message: format!("bad .out node: {rest}"),
                })?);
                continue;
            }
            if line.starts_with('.') {
                continue; // other directives ignored
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| NetlistError::Parse {
                line: lineno,
                message,
            };
            if parts.len() < 4 {
                return Err(err("expected `<KIND><n> <a> <b> <value>`".into()));
            }
            let kind = ComponentKind::from_letter(parts[0].chars().next().unwrap())
                .ok_or_else(|| err(format!("unknown component {}", parts[0])))?;
            let node_a: usize = parts[1]
                .parse()
                .map_err(|_| err(format!("bad node {}", parts[1])))?;
            let node_b: usize = parts[2]
                .parse()
                .map_err(|_| err(format!("bad node {}", parts[2])))?;
            let value_str = if kind == ComponentKind::VoltageSource && parts.len() >= 5 {
                parts[4] // `V1 1 0 AC 1.0`
            } else {
                parts[3]
            };
            let value: f64 = value_str
                .parse()
                .map_err(|_| err(format!("bad value {value_str}")))?;
            if kind == ComponentKind::VoltageSource {
                source_node = Some(node_a);
            }
            components.push(Component {
                kind,
                node_a,
                node_b,
                value,
            });
        }
        let source_node = source_node.ok_or(NetlistError::Parse {
            line: 0,
            message: "netlist has no voltage source".into(),
        })?;
        let max_node = components
            .iter()
            .flat_map(|c| [c.node_a, c.node_b])
            .max()
            .unwrap_or(0);
        Ok(Netlist {
            components,
            source_node,
            output_node: out_node.unwrap_or(max_node),
            ground_node: 0,
        })
    }
}

/// Uniformly random chromosome over kind x node pair x catalog index,
/// with uniform active bits.
pub fn random_chromosome(
    catalog: &ComponentCatalog,
    max_nodes: usize,
    max_components: usize,
    rng: &mut impl Rng,
) -> Result<Chromosome, NetlistError> {
    catalog.validate()?;
    if max_nodes < 3 {
        return Err(NetlistError::TooFewNodes(max_nodes));
    }
    if max_components == 0 {
        return Err(NetlistError::NoComponents);
    }
    let genes = (0..max_components)
        .map(|_| {
            let kind = ComponentKind::EVOLVABLE[rng.gen_range(0..ComponentKind::EVOLVABLE.len())];
            Gene {
                kind,
                node_a: rng.gen_range(0..max_nodes),
                node_b: rng.gen_range(0..max_nodes),
                value_index: rng.gen_range(0..catalog.entry(kind).values.len()),
                active: rng.gen_bool(0.5),
            }
        })
        .collect();
    Ok(Chromosome {
        genes,
        origin: Origin::Random,
    })
}

fn terminal_satisfied(genes: &[Gene], node: usize) -> bool {
    genes.iter().any(|g| g.is_live() && g.touches(node))
}

/// Repair a chromosome so that every fixed terminal (source, output,
/// ground) has at least one active, non-self-loop gene incident on it.
///
/// Repair scans genes in index order and rewires `node_a` of the first
/// active gene not already incident to a fixed terminal; inactive genes
/// are activated when no such candidate exists. Genes are never added,
/// and a gene that is the sole support of an already-satisfied terminal
/// is only rewired as a last resort.
pub fn postprocess(mut chromosome: Chromosome, scaffold: &Scaffold) -> Chromosome {
    let terminals = scaffold.terminals();
    for _ in 0..terminals.len() + 2 {
        let Some(t) = terminals
            .iter()
            .copied()
            .find(|&t| !terminal_satisfied(&chromosome.genes, t))
        else {
            break;
        };
        let genes = &chromosome.genes;
        let supporters =
            |node: usize| genes.iter().filter(|g| g.is_live() && g.touches(node)).count();
        let safe_to_rewire = |g: &Gene| {
            !g.is_live()
                || terminals
                    .iter()
                    .all(|&ft| !g.touches(ft) || supporters(ft) >= 2)
        };
        let idx = genes
            .iter()
            .position(|g| g.active && g.node_b != t && safe_to_rewire(g))
            .or_else(|| genes.iter().position(|g| !g.active))
            .or_else(|| genes.iter().position(|g| g.active && g.node_b != t))
            .or_else(|| genes.iter().position(|g| g.active));
        let Some(i) = idx else { break };
        let g = &mut chromosome.genes[i];
        g.active = true;
        g.node_a = t;
        if g.node_b == t {
            // Avoid creating a self-loop on the terminal.
            g.node_b = (t + 1) % scaffold.max_nodes.max(2);
        }
    }
    chromosome
}

/// Decode the active, non-self-loop genes into a netlist and append the
/// scaffold AC source between the source node and ground.
pub fn decode(chromosome: &Chromosome, catalog: &ComponentCatalog, scaffold: &Scaffold) -> Netlist {
    let mut components: Vec<Component> = chromosome
        .genes
        .iter()
        .filter(|g| g.is_live())
        .map(|g| Component {
            kind: g.kind,
            node_a: g.node_a,
            node_b: g.node_b,
            value: catalog.entry(g.kind).values[g.value_index],
        })
        .collect();
    components.push(Component {
        kind: ComponentKind::VoltageSource,
        node_a: scaffold.source_node,
        node_b: scaffold.ground_node,
        value: scaffold.ac_amplitude,
    });
    Netlist {
        components,
        source_node: scaffold.source_node,
        output_node: scaffold.output_node,
        ground_node: scaffold.ground_node,
    }
}
