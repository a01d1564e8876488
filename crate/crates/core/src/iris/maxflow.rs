//! Boykov–Kolmogorov augmenting-path max-flow for grid-like graphs.
//!
//! Nodes carry a signed terminal capacity (positive: source edge,
//! negative: sink edge). After [`Graph::maxflow`], [`Graph::in_source`]
//! reports the side of the minimum cut.

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;

pub struct Graph {
    // per node
    first: Vec<u32>,
    parent: Vec<u32>,
    next_active: Vec<u32>,
    ts: Vec<u64>,
    dist: Vec<u32>,
    is_sink: Vec<bool>,
    tr_cap: Vec<f64>,
    // per arc; arc `a` and `a ^ 1` are sisters
    head: Vec<u32>,
    next: Vec<u32>,
    r_cap: Vec<f64>,

    queue_first: u32,
    queue_last: u32,
    orphans: Vec<u32>,
    time: u64,
    flow: f64,
}

impl Graph {
    pub fn new(n_nodes: usize, arc_hint: usize) -> Self {
        Self {
            first: vec![NONE; n_nodes],
            parent: vec![NONE; n_nodes],
            next_active: vec![NONE; n_nodes],
            ts: vec![0; n_nodes],
            dist: vec![0; n_nodes],
            is_sink: vec![false; n_nodes],
            tr_cap: vec![0.0; n_nodes],
            head: Vec::with_capacity(2 * arc_hint),
            next: Vec::with_capacity(2 * arc_hint),
            r_cap: Vec::with_capacity(2 * arc_hint),
            queue_first: NONE,
            queue_last: NONE,
            orphans: Vec::new(),
            time: 0,
            flow: 0.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.first.len()
    }

    /// Adds `cap_source` on the source edge and `cap_sink` on the sink edge.
    pub fn add_tweights(&mut self, i: usize, cap_source: f64, cap_sink: f64) {
        let delta = self.tr_cap[i];
        let (mut s, mut t) = (cap_source, cap_sink);
        if delta > 0.0 {
            s += delta;
        } else {
            t -= delta;
        }
        self.flow += s.min(t);
        self.tr_cap[i] = s - t;
    }

    /// Edge `i -> j` with capacity `cap` and `j -> i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        let a = self.head.len() as u32;
        self.head.push(j as u32);
        self.next.push(self.first[i]);
        self.r_cap.push(cap);
        self.first[i] = a;
        self.head.push(i as u32);
        self.next.push(self.first[j]);
        self.r_cap.push(rev_cap);
        self.first[j] = a + 1;
    }

    pub fn flow(&self) -> f64 {
        self.flow
    }

    /// True when node `i` ends on the source side of the minimum cut.
    pub fn in_source(&self, i: usize) -> bool {
        self.parent[i] != NONE && !self.is_sink[i]
    }

    fn set_active(&mut self, i: u32) {
        if self.next_active[i as usize] == NONE {
            if self.queue_last != NONE {
                self.next_active[self.queue_last as usize] = i;
            } else {
                self.queue_first = i;
            }
            self.queue_last = i;
            // Self-loop marks the tail of the queue.
            self.next_active[i as usize] = i;
        }
    }

    fn next_active_node(&mut self) -> Option<u32> {
        loop {
            let i = self.queue_first;
            if i == NONE {
                return None;
            }
            let nxt = self.next_active[i as usize];
            if nxt == i {
                self.queue_first = NONE;
                self.queue_last = NONE;
            } else {
                self.queue_first = nxt;
            }
            self.next_active[i as usize] = NONE;
            if self.parent[i as usize] != NONE {
                return Some(i);
            }
        }
    }

    pub fn maxflow(&mut self) -> f64 {
        for i in 0..self.n_nodes() {
            self.next_active[i] = NONE;
            self.ts[i] = 0;
            if self.tr_cap[i] > 0.0 {
                self.is_sink[i] = false;
                self.parent[i] = TERMINAL;
                self.set_active(i as u32);
                self.dist[i] = 1;
            } else if self.tr_cap[i] < 0.0 {
                self.is_sink[i] = true;
                self.parent[i] = TERMINAL;
                self.set_active(i as u32);
                self.dist[i] = 1;
            } else {
                self.parent[i] = NONE;
            }
        }

        let mut current: Option<u32> = None;
        loop {
            let i = match current {
                Some(i) if self.parent[i as usize] != NONE => i,
                _ => match self.next_active_node() {
                    Some(i) => i,
                    None => break,
                },
            };
            current = None;
            let iu = i as usize;
            let mut found: Option<u32> = None;

            if !self.is_sink[iu] {
                let mut a = self.first[iu];
                while a != NONE {
                    if self.r_cap[a as usize] > 0.0 {
                        let j = self.head[a as usize] as usize;
                        if self.parent[j] == NONE {
                            self.is_sink[j] = false;
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                            self.set_active(j as u32);
                        } else if self.is_sink[j] {
                            found = Some(a);
                            break;
                        } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                        }
                    }
                    a = self.next[a as usize];
                }
            } else {
                let mut a = self.first[iu];
                while a != NONE {
                    if self.r_cap[(a ^ 1) as usize] > 0.0 {
                        let j = self.head[a as usize] as usize;
                        if self.parent[j] == NONE {
                            self.is_sink[j] = true;
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                            self.set_active(j as u32);
                        } else if !self.is_sink[j] {
                            found = Some(a ^ 1);
                            break;
                        } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                        }
                    }
                    a = self.next[a as usize];
                }
            }

            self.time += 1;
            if let Some(mid) = found {
                // Keep growing from this node after the augmentation.
                self.next_active[iu] = iu as u32;
                current = Some(i);
                self.augment(mid);
                while let Some(o) = self.orphans.pop() {
                    self.process_orphan(o);
                }
                self.next_active[iu] = NONE;
            }
        }
        self.flow
    }

    fn augment(&mut self, mid: u32) {
        let mut bottleneck = self.r_cap[mid as usize];
        // source side
        let mut i = self.head[(mid ^ 1) as usize] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.r_cap[(a ^ 1) as usize]);
            i = self.head[a as usize] as usize;
        }
        bottleneck = bottleneck.min(self.tr_cap[i]);
        // sink side
        let mut i = self.head[mid as usize] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.r_cap[a as usize]);
            i = self.head[a as usize] as usize;
        }
        bottleneck = bottleneck.min(-self.tr_cap[i]);

        self.r_cap[(mid ^ 1) as usize] += bottleneck;
        self.r_cap[mid as usize] -= bottleneck;

        let mut i = self.head[(mid ^ 1) as usize] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            self.r_cap[a as usize] += bottleneck;
            self.r_cap[(a ^ 1) as usize] -= bottleneck;
            if self.r_cap[(a ^ 1) as usize] <= 0.0 {
                self.r_cap[(a ^ 1) as usize] = 0.0;
                self.parent[i] = ORPHAN;
                self.orphans.push(i as u32);
            }
            i = self.head[a as usize] as usize;
        }
        self.tr_cap[i] -= bottleneck;
        if self.tr_cap[i] <= 0.0 {
            self.tr_cap[i] = 0.0;
            self.parent[i] = ORPHAN;
            self.orphans.push(i as u32);
        }

        let mut i = self.head[mid as usize] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            self.r_cap[(a ^ 1) as usize] += bottleneck;
            self.r_cap[a as usize] -= bottleneck;
            if self.r_cap[a as usize] <= 0.0 {
                self.r_cap[a as usize] = 0.0;
                self.parent[i] = ORPHAN;
                self.orphans.push(i as u32);
            }
            i = self.head[a as usize] as usize;
        }
        self.tr_cap[i] += bottleneck;
        if self.tr_cap[i] >= 0.0 {
            self.tr_cap[i] = 0.0;
            self.parent[i] = ORPHAN;
            self.orphans.push(i as u32);
        }
        self.flow += bottleneck;
    }

    fn process_orphan(&mut self, i: u32) {
        let iu = i as usize;
        let sink = self.is_sink[iu];
        let mut best_arc = NONE;
        let mut best_d = u32::MAX;

        let mut a0 = self.first[iu];
        while a0 != NONE {
            let cap = if sink {
                self.r_cap[a0 as usize]
            } else {
                self.r_cap[(a0 ^ 1) as usize]
            };
            if cap > 0.0 {
                let j = self.head[a0 as usize] as usize;
                if self.is_sink[j] == sink && self.parent[j] != NONE {
                    // Walk to the root to check the origin and get the distance.
                    let mut d = 0u32;
                    let mut k = j;
                    let valid = loop {
                        if self.ts[k] == self.time {
                            d += self.dist[k];
                            break true;
                        }
                        let a = self.parent[k];
                        d += 1;
                        if a == TERMINAL {
                            self.ts[k] = self.time;
                            self.dist[k] = 1;
                            break true;
                        }
                        if a == ORPHAN {
                            break false;
                        }
                        k = self.head[a as usize] as usize;
                    };
                    if valid {
                        if d < best_d {
                            best_arc = a0;
                            best_d = d;
                        }
                        // Cache distances along the path.
                        let mut k = j;
                        let mut dd = d;
                        while self.ts[k] != self.time {
                            self.ts[k] = self.time;
                            self.dist[k] = dd;
                            dd -= 1;
                            k = self.head[self.parent[k] as usize] as usize;
                        }
                    }
                }
            }
            a0 = self.next[a0 as usize];
        }

        if best_arc != NONE {
            self.parent[iu] = best_arc;
            self.ts[iu] = self.time;
            self.dist[iu] = best_d + 1;
            return;
        }

        self.parent[iu] = NONE;
        let mut a0 = self.first[iu];
        while a0 != NONE {
            let j = self.head[a0 as usize] as usize;
            if self.is_sink[j] == sink {
                let a = self.parent[j];
                if a != NONE {
                    let cap = if sink {
                        self.r_cap[a0 as usize]
                    } else {
                        self.r_cap[(a0 ^ 1) as usize]
                    };
                    if cap > 0.0 {
                        self.set_active(j as u32);
                    }
                    if a != TERMINAL && a != ORPHAN && self.head[a as usize] == i {
                        self.parent[j] = ORPHAN;
                        self.orphans.push(j as u32);
                    }
                }
            }
            a0 = self.next[a0 as usize];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Min cut by enumerating every source/sink assignment.
    fn brute_min_cut(n: usize, tw: &[(f64, f64)], edges: &[(usize, usize, f64, f64)]) -> f64 {
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let src = |i: usize| mask & (1 << i) != 0;
            let mut cost = 0.0;
            for (i, &(s, t)) in tw.iter().enumerate() {
                // source-side nodes cut their sink edge and vice versa
                cost += if src(i) { t } else { s };
            }
            for &(i, j, c, rc) in edges {
                if src(i) && !src(j) {
                    cost += c;
                }
                if src(j) && !src(i) {
                    cost += rc;
                }
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn two_node_chain() {
        let mut g = Graph::new(2, 1);
        g.add_tweights(0, 5.0, 0.0);
        g.add_tweights(1, 0.0, 3.0);
        g.add_edge(0, 1, 4.0, 0.0);
        assert_eq!(g.maxflow(), 3.0);
        // the edge 0->1 keeps residual capacity, so the cut is at 1's sink link
        assert!(g.in_source(0));
        assert!(g.in_source(1));
    }

    proptest! {
        #[test]
        fn matches_brute_force_cut(
            n in 2usize..9,
            tw in proptest::collection::vec((0u8..10, 0u8..10), 9),
            edges in proptest::collection::vec((0usize..9, 0usize..9, 0u8..8, 0u8..8), 0..20),
        ) {
            let tw: Vec<(f64, f64)> = tw[..n].iter().map(|&(s, t)| (s as f64, t as f64)).collect();
            let edges: Vec<(usize, usize, f64, f64)> = edges
                .into_iter()
                .filter(|&(i, j, _, _)| i < n && j < n && i != j)
                .map(|(i, j, c, r)| (i, j, c as f64, r as f64))
                .collect();
            let mut g = Graph::new(n, edges.len());
            for (i, &(s, t)) in tw.iter().enumerate() {
                g.add_tweights(i, s, t);
            }
            for &(i, j, c, r) in &edges {
                g.add_edge(i, j, c, r);
            }
            let flow = g.maxflow();
            let want = brute_min_cut(n, &tw, &edges);
            prop_assert!((flow - want).abs() < 1e-9, "flow {} want {}", flow, want);

            // The reported partition must realize the cut value.
            let mut cut = 0.0;
            for (i, &(s, t)) in tw.iter().enumerate() {
                cut += if g.in_source(i) { t } else { s };
            }
            for &(i, j, c, r) in &edges {
                if g.in_source(i) && !g.in_source(j) { cut += c; }
                if g.in_source(j) && !g.in_source(i) { cut += r; }
            }
            prop_assert!((cut - want).abs() < 1e-9, "cut {} want {}", cut, want);
        }
    }
}
