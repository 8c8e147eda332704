use rustc_hash::FxHashMap as HashMap;

use super::DependencyComponent;
use crate::graph::{Category, ComputationGraph, Port, VertexId, VertexKind};

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn is_seed(category: Category) -> bool {
    matches!(
        category,
        Category::Accessory | Category::SdJoint | Category::Unknown
    )
}

/// Builds a component from member ids, ordering members topologically and
/// computing the flags.
fn assemble(g: &ComputationGraph, mut members: Vec<VertexId>) -> DependencyComponent {
    members.sort_unstable_by_key(|&v| g.topo_index(v));
    members.dedup();
    let mut comp = DependencyComponent::default();
    for &id in &members {
        let v = g.vertex(id);
        match v.category() {
            Category::Stem => comp.stem_ids.push(id),
            _ => comp.accessory_ids.push(id),
        }
        if v.category() == Category::Unknown {
            comp.contains_unknown = true;
        }
        if g.successors(id)
            .any(|s| g.vertex(s).kind == VertexKind::Output)
        {
            comp.adjacent_to_output = true;
        }
    }
    comp.vertex_ids = members;
    comp
}

fn order_components(g: &ComputationGraph, comps: &mut [DependencyComponent]) {
    comps.sort_by_cached_key(|c| c.vertex_ids.first().map(|&v| g.topo_index(v)));
}

/// Connected components of the subgraph induced by accessory,
/// shape-dependent joint and unknown vertices.
pub fn seed_components(g: &ComputationGraph) -> Vec<DependencyComponent> {
    let n = g.len();
    let mut sets = DisjointSets::new(n);
    let order: Vec<&crate::graph::Vertex> = g.topo_order().collect();
    for v in &order {
        if !is_seed(v.category()) {
            continue;
        }
        let a = g.topo_index(v.id);
        for &p in g.predecessors(v.id) {
            if let Port::Vertex(src) = p {
                if is_seed(g.vertex(src).category()) {
                    sets.union(a, g.topo_index(src));
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<VertexId>> = HashMap::default();
    for v in &order {
        if is_seed(v.category()) {
            let root = sets.find(g.topo_index(v.id));
            groups.entry(root).or_default().push(v.id);
        }
    }
    let mut comps: Vec<DependencyComponent> =
        groups.into_values().map(|m| assemble(g, m)).collect();
    order_components(g, &mut comps);
    comps
}

/// Absorbs the stems feeding each component. Growth stops at stems (they are
/// absorbed but not crossed) and at shape-independent joints. Stems absorbed
/// by no component are returned as singletons. Returned components may
/// overlap until merged.
pub fn grow_components(
    g: &ComputationGraph,
    comps: Vec<DependencyComponent>,
) -> Vec<DependencyComponent> {
    let mut absorbed = vec![false; g.len()];
    let mut out: Vec<DependencyComponent> = comps
        .into_iter()
        .map(|c| {
            let mut members = c.vertex_ids.clone();
            for &id in &c.vertex_ids {
                for &p in g.predecessors(id) {
                    let Port::Vertex(src) = p else { continue };
                    if g.vertex(src).category() == Category::Stem {
                        absorbed[g.topo_index(src)] = true;
                        members.push(src);
                    }
                }
            }
            assemble(g, members)
        })
        .collect();
    for v in g.topo_order() {
        if v.category() == Category::Stem && !absorbed[g.topo_index(v.id)] {
            out.push(assemble(g, vec![v.id]));
        }
    }
    order_components(g, &mut out);
    out
}

/// Merges components that share any vertex. Flags are OR-ed.
pub fn merge_components(
    g: &ComputationGraph,
    comps: Vec<DependencyComponent>,
) -> Vec<DependencyComponent> {
    let mut sets = DisjointSets::new(comps.len());
    let mut owner: HashMap<VertexId, usize> = HashMap::default();
    for (i, c) in comps.iter().enumerate() {
        for &v in &c.vertex_ids {
            match owner.get(&v) {
                Some(&j) => sets.union(i, j),
                None => {
                    owner.insert(v, i);
                }
            }
        }
    }
    let mut merged: HashMap<usize, (Vec<VertexId>, bool, bool)> = HashMap::default();
    for (i, c) in comps.into_iter().enumerate() {
        let entry = merged.entry(sets.find(i)).or_default();
        entry.0.extend(c.vertex_ids);
        entry.1 |= c.contains_unknown;
        entry.2 |= c.adjacent_to_output;
    }
    let mut out: Vec<DependencyComponent> = merged
        .into_values()
        .map(|(members, unknown, adjacent)| {
            let mut c = assemble(g, members);
            c.contains_unknown |= unknown;
            c.adjacent_to_output |= adjacent;
            c
        })
        .collect();
    order_components(g, &mut out);
    out
}
