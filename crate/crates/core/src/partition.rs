//! Fixed-size node blocks for partition-per-batch pretraining.
//!
//! Seeded multi-source BFS region growing: `P = ceil(n / target)` seeds, one
//! node claimed per region per round, leftovers attached to the smallest
//! adjacent region. Regions are capped at `2 * target` nodes.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::two_columns;
use crate::error::{GsptError, Result};
use crate::graph::Graph;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    assignment: Vec<u32>,
    part_sizes: Vec<usize>,
}

const UNASSIGNED: u32 = u32::MAX;

impl PartitionMap {
    pub fn from_assignment(assignment: Vec<u32>) -> Result<Self> {
        let p = assignment.iter().map(|&a| a as usize + 1).max().unwrap_or(0);
        let mut part_sizes = vec![0usize; p];
        for &a in &assignment {
            part_sizes[a as usize] += 1;
        }
        if let Some(empty) = part_sizes.iter().position(|&s| s == 0) {
            return Err(GsptError::data(format!("partition {empty} is empty")));
        }
        Ok(PartitionMap { assignment, part_sizes })
    }

    pub fn num_parts(&self) -> usize {
        self.part_sizes.len()
    }

    pub fn part_of(&self, u: usize) -> usize {
        self.assignment[u] as usize
    }

    pub fn part_sizes(&self) -> &[usize] {
        &self.part_sizes
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Global node ids of one part, ascending.
    pub fn members(&self, part: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a as usize == part)
            .map(|(u, _)| u)
            .collect()
    }

    pub fn edge_cut(&self, g: &Graph) -> usize {
        g.edges()
            .filter(|&(u, v)| self.assignment[u] != self.assignment[v])
            .count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = format!("#P={}\n", self.num_parts());
        for (u, a) in self.assignment.iter().enumerate() {
            writeln!(s, "{u}\t{a}").unwrap();
        }
        fs::write(path, s).map_err(|e| GsptError::io(path, e))
    }

    pub fn read(path: &Path, n: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GsptError::io(path, e))?;
        let header = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("#P="))
            .and_then(|p| p.trim().parse::<usize>().ok())
            .ok_or_else(|| GsptError::format(path, "missing #P=<count> header"))?;
        let mut assignment = vec![UNASSIGNED; n];
        for row in two_columns(path, &text) {
            let (line, a, b) = row?;
            let (u, p) = match (a.parse::<usize>(), b.parse::<u32>()) {
                (Ok(u), Ok(p)) => (u, p),
                _ => return Err(GsptError::format(path, format!("line {line}: bad row"))),
            };
            if u >= n || p as usize >= header {
                return Err(GsptError::data(format!("line {line}: id out of range")));
            }
            assignment[u] = p;
        }
        if assignment.contains(&UNASSIGNED) {
            return Err(GsptError::data("partition file does not cover every node"));
        }
        let pm = Self::from_assignment(assignment)?;
        if pm.num_parts() != header {
            return Err(GsptError::data(format!(
                "header says P={header}, file has {} parts",
                pm.num_parts()
            )));
        }
        Ok(pm)
    }
}

pub fn partition(g: &Graph, target_size: usize, seed: u64) -> Result<PartitionMap> {
    let n = g.n();
    if n == 0 {
        return Err(GsptError::data("cannot partition an empty graph"));
    }
    if target_size == 0 {
        return Err(GsptError::config("partition target size must be >= 1"));
    }
    let p = n.div_ceil(target_size);
    let cap = 2 * target_size;
    let mut rng = rng::stream(rng::purpose(seed, "partition"), &[]);

    let mut assignment = vec![UNASSIGNED; n];
    let mut sizes = vec![0usize; p];
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); p];

    // Seeds: prefer nodes whose component holds no seed yet, so disconnected
    // pieces are not split between regions while others go unseeded.
    let mut covered = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    for part in 0..p {
        while cursor < n && covered[order[cursor]] {
            cursor += 1;
        }
        let s = if cursor < n {
            order[cursor]
        } else {
            let free: Vec<usize> = (0..n).filter(|&u| assignment[u] == UNASSIGNED).collect();
            free[rng.random_range(0..free.len())]
        };
        if !covered[s] {
            mark_component(g, s, &mut covered);
        }
        assignment[s] = part as u32;
        sizes[part] = 1;
        queues[part].push_back(s);
    }

    // Round-robin growth, one claimed node per region per round.
    let mut active = vec![true; p];
    while active.iter().any(|&a| a) {
        for part in 0..p {
            if !active[part] {
                continue;
            }
            if sizes[part] >= cap {
                active[part] = false;
                continue;
            }
            let mut claimed = false;
            while let Some(&u) = queues[part].front() {
                if let Some(&v) = g.neighbors(u).iter().find(|&&v| assignment[v as usize] == UNASSIGNED) {
                    let v = v as usize;
                    assignment[v] = part as u32;
                    sizes[part] += 1;
                    queues[part].push_back(v);
                    claimed = true;
                    break;
                }
                queues[part].pop_front();
            }
            if !claimed {
                active[part] = false;
            }
        }
    }

    // Leftovers: attach to the smallest adjacent region with room; nodes with
    // no assigned neighbor wait for a later pass, and if a pass makes no
    // progress they go to the smallest region overall.
    loop {
        let pending: Vec<usize> = (0..n).filter(|&u| assignment[u] == UNASSIGNED).collect();
        if pending.is_empty() {
            break;
        }
        let mut progress = false;
        for &u in &pending {
            let best = g
                .neighbors(u)
                .iter()
                .map(|&v| assignment[v as usize])
                .filter(|&a| a != UNASSIGNED && sizes[a as usize] < cap)
                .min_by_key(|&a| (sizes[a as usize], a));
            if let Some(a) = best {
                assignment[u] = a;
                sizes[a as usize] += 1;
                progress = true;
            }
        }
        if !progress {
            // A seedless component: flood it into the smallest region.
            let u = pending[0];
            let mut queue = VecDeque::from([u]);
            let mut target = smallest(&sizes);
            assignment[u] = target as u32;
            sizes[target] += 1;
            while let Some(x) = queue.pop_front() {
                for &v in g.neighbors(x) {
                    let v = v as usize;
                    if assignment[v] == UNASSIGNED {
                        if sizes[target] >= cap {
                            target = smallest(&sizes);
                        }
                        assignment[v] = target as u32;
                        sizes[target] += 1;
                        queue.push_back(v);
                    }
                }
            }
        }
    }

    PartitionMap::from_assignment(assignment)
}

fn smallest(sizes: &[usize]) -> usize {
    (0..sizes.len()).min_by_key(|&i| (sizes[i], i)).unwrap()
}

fn mark_component(g: &Graph, s: usize, covered: &mut [bool]) {
    let mut queue = VecDeque::from([s]);
    covered[s] = true;
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if !covered[v as usize] {
                covered[v as usize] = true;
                queue.push_back(v as usize);
            }
        }
    }
}

/// Subgraph over one part's nodes keeping only intra-part edges. Returns the
/// local graph and the local → global id map (ascending global ids).
pub fn induced_subgraph(g: &Graph, pm: &PartitionMap, part: usize) -> Result<(Graph, Vec<usize>)> {
    if part >= pm.num_parts() {
        return Err(GsptError::data(format!(
            "partition id {part} out of range (P = {})",
            pm.num_parts()
        )));
    }
    let node_map = pm.members(part);
    let mut local = vec![UNASSIGNED; g.n()];
    for (i, &u) in node_map.iter().enumerate() {
        local[u] = i as u32;
    }
    let edges = node_map.iter().enumerate().flat_map(|(i, &u)| {
        let local = &local;
        g.neighbors(u).iter().filter_map(move |&v| {
            let lv = local[v as usize];
            (lv != UNASSIGNED && (lv as usize) > i).then_some((i, lv as usize))
        })
    });
    let sub = Graph::from_edges(node_map.len(), edges)?;
    Ok((sub, node_map))
}
