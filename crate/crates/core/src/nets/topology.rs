use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

/// Name of the pseudo-joint that carries the root transform channels.
pub const ARMATURE: &str = "<armature>";
/// Key of the pooled group that holds the skeleton root.
pub const ROOT_KEY: &str = "<root>";

/// A tree of feature nodes rooted at node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletalTopology {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    #[serde(skip)]
    dist: Vec<Vec<usize>>,
}

impl SkeletalTopology {
    /// `parents[i] < i` for every node but the root.
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>) -> Result<Self> {
        if names.is_empty() || names.len() != parents.len() {
            return Err(Error::Skeleton(format!("topology with {} names and {} parents", names.len(), parents.len())));
        }
        for (i, p) in parents.iter().enumerate() {
            let ok = match p {
                None => i == 0,
                Some(p) => *p < i,
            };
            if !ok {
                return Err(Error::Skeleton(format!("topology node {i} has parent {p:?}")));
            }
        }
        let mut t = Self { names, parents, dist: Vec::new() };
        t.dist = (0..t.len()).map(|i| t.bfs(i)).collect();
        Ok(t)
    }

    /// The skeleton's joints followed by the armature node attached to the root.
    pub fn augmented(skeleton: &Skeleton) -> Self {
        let mut names: Vec<String> = skeleton.joints().iter().map(|j| j.name.clone()).collect();
        let mut parents: Vec<Option<usize>> = skeleton.joints().iter().map(|j| j.parent).collect();
        names.push(ARMATURE.to_string());
        parents.push(Some(0));
        Self::new(names, parents).expect("skeleton order is topological")
    }

    fn bfs(&self, start: usize) -> Vec<usize> {
        let mut d = vec![usize::MAX; self.len()];
        d[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for n in self.neighbors(i) {
                if d[n] == usize::MAX {
                    d[n] = d[i] + 1;
                    queue.push_back(n);
                }
            }
        }
        d
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.parents[c] == Some(i)).collect()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut n = self.children(i);
        n.extend(self.parents[i]);
        n.sort_unstable();
        n
    }

    pub fn distance(&self, a: usize, b: usize) -> usize {
        if self.dist.is_empty() {
            return self.bfs(a)[b];
        }
        self.dist[a][b]
    }

    /// Nodes within graph distance `d` of `i`, in index order.
    pub fn neighborhood(&self, i: usize, d: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.distance(i, j) <= d).collect()
    }

    /// Undirected edges as sorted name pairs.
    fn named_edges(&self) -> BTreeSet<(String, String)> {
        (1..self.len())
            .map(|i| {
                let (a, b) = (self.names[i].clone(), self.names[self.parents[i].unwrap()].clone());
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }
}

/// Map from a fine topology to a coarser one where every maximal chain of
/// single-child nodes collapses into one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooling {
    groups: Vec<Vec<usize>>,
    fine_len: usize,
    coarse: SkeletalTopology,
}

impl Pooling {
    /// Collapses chains of `topo`. Coarse nodes are named by the sorted leaf names
    /// below the chain, so homeomorphic trees get equal names.
    pub fn chains(topo: &SkeletalTopology) -> Self {
        let n = topo.len();
        let children: Vec<Vec<usize>> = (0..n).map(|i| topo.children(i)).collect();
        let mut groups: Vec<Vec<usize>> = vec![vec![0]];
        let mut parents: Vec<Option<usize>> = vec![None];
        let mut starts: Vec<(usize, usize)> = children[0].iter().map(|&c| (c, 0)).collect();
        let mut k = 0;
        while k < starts.len() {
            let (start, parent_group) = starts[k];
            k += 1;
            let mut chain = vec![start];
            let mut cur = start;
            while children[cur].len() == 1 {
                cur = children[cur][0];
                chain.push(cur);
            }
            let id = groups.len();
            groups.push(chain);
            parents.push(Some(parent_group));
            starts.extend(children[cur].iter().map(|&c| (c, id)));
        }
        // Order groups by their first member so untouched trees keep their numbering.
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&g| groups[g][0]);
        let mut rank = vec![0; groups.len()];
        for (r, &g) in order.iter().enumerate() {
            rank[g] = r;
        }
        let parents: Vec<Option<usize>> = order.iter().map(|&g| parents[g].map(|p| rank[p])).collect();
        let groups: Vec<Vec<usize>> = order.iter().map(|&g| groups[g].clone()).collect();
        let mut leaves: Vec<Vec<String>> = vec![Vec::new(); n];
        for i in (0..n).rev() {
            if children[i].is_empty() {
                leaves[i].push(topo.names[i].clone());
            }
            if let Some(p) = topo.parents[i] {
                let l = leaves[i].clone();
                leaves[p].extend(l);
            }
        }
        let names = groups
            .iter()
            .enumerate()
            .map(|(g, members)| {
                if g == 0 {
                    return ROOT_KEY.to_string();
                }
                let mut l = leaves[*members.last().unwrap()].clone();
                l.sort();
                l.join("+")
            })
            .collect();
        let coarse = SkeletalTopology::new(names, parents).expect("groups are created parent first");
        Self { groups, fine_len: n, coarse }
    }

    /// Pooling that leaves `topo` untouched.
    pub fn identity(topo: &SkeletalTopology) -> Self {
        Self { groups: (0..topo.len()).map(|i| vec![i]).collect(), fine_len: topo.len(), coarse: topo.clone() }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn coarse(&self) -> &SkeletalTopology {
        &self.coarse
    }

    pub fn fine_len(&self) -> usize {
        self.fine_len
    }

    pub fn is_identity(&self) -> bool {
        self.groups.iter().enumerate().all(|(g, m)| m == &[g])
    }

    /// Coarse node of every fine node.
    pub fn assignment(&self) -> Vec<usize> {
        let mut a = vec![0; self.fine_len];
        for (g, members) in self.groups.iter().enumerate() {
            for &m in members {
                a[m] = g;
            }
        }
        a
    }

    /// Reorders the coarse nodes to follow `reference`, which must name the same
    /// nodes with the same edges.
    fn aligned_to(&self, reference: &SkeletalTopology) -> Result<Self> {
        let mine = &self.coarse;
        let a: BTreeSet<&String> = mine.names.iter().collect();
        let b: BTreeSet<&String> = reference.names.iter().collect();
        if a != b || a.len() != mine.len() || b.len() != reference.len() {
            return Err(Error::Skeleton(format!(
                "skeletons are not homeomorphic: reduced nodes {:?} vs {:?}",
                reference.names, mine.names
            )));
        }
        if mine.named_edges() != reference.named_edges() {
            return Err(Error::Skeleton("skeletons are not homeomorphic: reduced trees connect differently".into()));
        }
        let index: BTreeMap<&String, usize> = mine.names.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let groups = reference.names.iter().map(|n| self.groups[index[n]].clone()).collect();
        Ok(Self { groups, fine_len: self.fine_len, coarse: reference.clone() })
    }
}

/// Pooling levels of one skeleton: `levels[0]` is the augmented joint tree and
/// `pools[l]` maps `levels[l]` onto `levels[l + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<SkeletalTopology>,
    pub pools: Vec<Pooling>,
}

impl Hierarchy {
    fn build(fine: SkeletalTopology, depth: usize) -> Self {
        let mut levels = vec![fine];
        let mut pools = Vec::new();
        for _ in 0..depth {
            let p = Pooling::chains(levels.last().unwrap());
            levels.push(p.coarse.clone());
            pools.push(p);
        }
        Self { levels, pools }
    }

    pub fn depth(&self) -> usize {
        self.pools.len()
    }

    pub fn fine(&self) -> &SkeletalTopology {
        &self.levels[0]
    }
}

/// Source and target hierarchies whose reduced levels coincide node for node.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonPair {
    pub source: Hierarchy,
    pub target: Hierarchy,
}

impl SkeletonPair {
    /// `aliases` renames target joints to their source counterparts before the
    /// trees are compared.
    pub fn new(source: &Skeleton, target: &Skeleton, depth: usize, aliases: &BTreeMap<String, String>) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("at least one pooling level is required".into()));
        }
        let src = Hierarchy::build(SkeletalTopology::augmented(source), depth);
        let fine_t = SkeletalTopology::augmented(target);
        let renamed: Vec<String> =
            fine_t.names.iter().map(|n| aliases.get(n).cloned().unwrap_or_else(|| n.clone())).collect();
        let key_topo = SkeletalTopology::new(renamed, fine_t.parents.clone())?;
        let first = Pooling::chains(&key_topo).aligned_to(&src.levels[1])?;
        let mut levels = vec![fine_t, src.levels[1].clone()];
        let mut pools = vec![first];
        for l in 1..depth {
            levels.push(src.levels[l + 1].clone());
            pools.push(src.pools[l].clone());
        }
        Ok(Self { source: src, target: Hierarchy { levels, pools } })
    }

    pub fn swapped(&self) -> Self {
        Self { source: self.target.clone(), target: self.source.clone() }
    }

    pub fn depth(&self) -> usize {
        self.source.depth()
    }
}
