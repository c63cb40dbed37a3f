#![allow(dead_code)]

//! Exhaustive search over per-request placements, independent of the
//! allocator under test.

use std::collections::HashMap;

/// A small instance in plain integers: base costs `c`, running costs `z`,
/// penalty `p_num / p_den`, capacity `cap` requests per instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub c: Vec<i64>,
    pub z: Vec<i64>,
    pub p_num: i64,
    pub p_den: i64,
    pub cap: u64,
    pub n0: Vec<u64>,
    pub k0: Vec<u64>,
    pub requests: usize,
}

impl Instance {
    /// Instance counts stay below this in every test instance.
    fn max_power(&self) -> u32 {
        24
    }

    /// Costs are integers scaled by `p_den^max_power`, so sums stay exact.
    pub fn scale(&self) -> i128 {
        (self.p_den as i128).pow(self.max_power())
    }

    /// `c · p^n`, scaled.
    fn inst(&self, i: usize, n: u64) -> i128 {
        let e = self.max_power() - n as u32;
        self.c[i] as i128 * (self.p_num as i128).pow(n as u32) * (self.p_den as i128).pow(e)
    }

    /// Σ_{j<n} c·p^j: the instance term built one instance at a time.
    pub fn instance_total(&self, i: usize, n: u64) -> i128 {
        (0..n).map(|j| self.inst(i, j)).sum()
    }

    pub fn total(&self, n: &[u64], k: &[u64]) -> i128 {
        let s = self.scale();
        (0..self.c.len())
            .map(|i| self.instance_total(i, n[i]) + k[i] as i128 * self.z[i] as i128 * s)
            .sum()
    }

    fn full(&self, n: &[u64], k: &[u64], i: usize) -> bool {
        k[i] >= n[i] * self.cap
    }

    /// Minimum final total over every way of placing each request on any
    /// model, provisioning exactly when that model is full.
    pub fn brute_force_min(&self) -> i128 {
        let mut memo = HashMap::new();
        let extra = self.search(self.requests, self.n0.clone(), self.k0.clone(), &mut memo, false);
        self.total(&self.n0, &self.k0) + extra
    }

    /// The same search restricted to the choices the greedy scan faces:
    /// take the first free model, or at each full model before it either
    /// provision there or move on.
    pub fn decision_tree_min(&self) -> i128 {
        let mut memo = HashMap::new();
        let extra = self.search(self.requests, self.n0.clone(), self.k0.clone(), &mut memo, true);
        self.total(&self.n0, &self.k0) + extra
    }

    fn search(
        &self,
        left: usize,
        n: Vec<u64>,
        k: Vec<u64>,
        memo: &mut HashMap<(usize, Vec<u64>, Vec<u64>), i128>,
        scan_only: bool,
    ) -> i128 {
        if left == 0 {
            return 0;
        }
        let key = (left, n.clone(), k.clone());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let s = self.scale();
        let mut best = i128::MAX;
        for i in 0..self.c.len() {
            let (mut n2, mut k2) = (n.clone(), k.clone());
            let mut step = self.z[i] as i128 * s;
            if self.full(&n, &k, i) {
                step += self.inst(i, n[i]);
                n2[i] += 1;
            }
            k2[i] += 1;
            best = best.min(step + self.search(left - 1, n2, k2, memo, scan_only));
            if scan_only && !self.full(&n, &k, i) {
                // The scan stops at the first free model.
                break;
            }
        }
        memo.insert(key, best);
        best
    }
}
