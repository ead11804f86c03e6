use crate::data::DiscreteDataset;

use super::BncError;

/// Class-rooted network: every feature has the class as a parent and at most
/// one feature parent. Feature parents form a forest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Structure {
    n_classes: usize,
    cardinalities: Vec<usize>,
    parents: Vec<Option<usize>>,
}

impl Structure {
    pub fn new(n_classes: usize, cardinalities: Vec<usize>, parents: Vec<Option<usize>>) -> Result<Self, BncError> {
        if cardinalities.is_empty() {
            return Err(BncError::Structure("no features".into()));
        }
        if n_classes == 0 || cardinalities.iter().any(|&c| c == 0) {
            return Err(BncError::Structure("zero cardinality".into()));
        }
        if parents.len() != cardinalities.len() {
            return Err(BncError::Structure("parent list length differs from feature count".into()));
        }
        let l = parents.len();
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= l || p == i {
                    return Err(BncError::Structure(format!("feature {i} has invalid parent {p}")));
                }
            }
        }
        // walking up from any node must end within l steps
        for start in 0..l {
            let (mut node, mut steps) = (start, 0);
            while let Some(p) = parents[node] {
                node = p;
                steps += 1;
                if steps > l {
                    return Err(BncError::Structure(format!("cycle through feature {start}")));
                }
            }
        }
        Ok(Structure {
            n_classes,
            cardinalities,
            parents,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    /// Feature parent of feature `i`, if any. The class is always a parent.
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn is_naive(&self) -> bool {
        self.parents.iter().all(Option::is_none)
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n_features()];
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                ch[p].push(i);
            }
        }
        ch
    }

    /// Features ordered so that every child comes after its parent.
    pub fn topological_order(&self) -> Vec<usize> {
        let ch = self.children();
        let mut order: Vec<usize> = (0..self.n_features()).filter(|&i| self.parents[i].is_none()).collect();
        let mut at = 0;
        while at < order.len() {
            let node = order[at];
            order.extend_from_slice(&ch[node]);
            at += 1;
        }
        order
    }

    /// Number of free parameters (each conditional row has `card - 1`).
    pub fn free_parameters(&self) -> usize {
        let c = self.n_classes;
        let mut n = c - 1;
        for (i, &card) in self.cardinalities.iter().enumerate() {
            let pcard = self.parents[i].map_or(1, |p| self.cardinalities[p]);
            n += c * pcard * (card - 1);
        }
        n
    }

    pub fn check_compatible(&self, data: &DiscreteDataset) -> Result<(), BncError> {
        if data.n_features() != self.n_features() || data.n_classes() > self.n_classes {
            return Err(BncError::Shape(format!(
                "dataset has {} features / {} classes, structure {} / {}",
                data.n_features(),
                data.n_classes(),
                self.n_features(),
                self.n_classes
            )));
        }
        if data.cardinalities().iter().zip(&self.cardinalities).any(|(d, s)| d > s) {
            return Err(BncError::Shape("dataset cardinality exceeds structure".into()));
        }
        Ok(())
    }
}

/// Naive Bayes: the class is the only parent of every feature.
pub fn learn_structure_nb(n_classes: usize, cardinalities: &[usize]) -> Result<Structure, BncError> {
    Structure::new(n_classes, cardinalities.to_vec(), vec![None; cardinalities.len()])
}

/// Smoothing added to every joint cell when estimating conditional mutual
/// information.
pub const CMI_SMOOTHING: f64 = 1.0;

/// `I(X_i; X_j | C)` for every pair `i < j` from smoothed counts, indexed as
/// `cmi[i][j]`.
pub fn conditional_mutual_information(data: &DiscreteDataset, smoothing: f64) -> Vec<Vec<f64>> {
    let l = data.n_features();
    let nc = data.n_classes();
    let cards = data.cardinalities();
    let mut out = vec![vec![0.0; l]; l];
    let mut joint = Vec::new();
    for i in 0..l {
        for j in i + 1..l {
            let (ci, cj) = (cards[i], cards[j]);
            joint.clear();
            joint.resize(nc * ci * cj, smoothing);
            for n in 0..data.len() {
                let row = data.row(n);
                joint[(data.label(n) * ci + row[i] as usize) * cj + row[j] as usize] += 1.0;
            }
            let total: f64 = joint.iter().sum();
            let mut cmi = 0.0;
            for c in 0..nc {
                let block = &joint[c * ci * cj..(c + 1) * ci * cj];
                let pc: f64 = block.iter().sum::<f64>() / total;
                let mut pi = vec![0.0; ci];
                let mut pj = vec![0.0; cj];
                for a in 0..ci {
                    for b in 0..cj {
                        let p = block[a * cj + b] / total;
                        pi[a] += p;
                        pj[b] += p;
                    }
                }
                for a in 0..ci {
                    for b in 0..cj {
                        let p = block[a * cj + b] / total;
                        if p > 0.0 {
                            cmi += p * (p * pc / (pi[a] * pj[b])).ln();
                        }
                    }
                }
            }
            out[i][j] = cmi;
            out[j][i] = cmi;
        }
    }
    out
}

/// Tree-augmented naive Bayes via a maximum spanning tree over pairwise
/// conditional mutual information.
///
/// Ties between equal weights go to the lexicographically smaller edge; the
/// tree is rooted at feature 0 and directed away from it. Fewer than two
/// features gives naive Bayes.
pub fn learn_structure_tan(data: &DiscreteDataset) -> Result<Structure, BncError> {
    if data.has_missing() {
        return Err(BncError::MissingValues);
    }
    let l = data.n_features();
    if l < 2 {
        return learn_structure_nb(data.n_classes(), data.cardinalities());
    }
    let cmi = conditional_mutual_information(data, CMI_SMOOTHING);
    let mut edges: Vec<(usize, usize)> = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).collect();
    // stable sort keeps lexicographic order among equal weights
    edges.sort_by(|a, b| cmi[b.0][b.1].total_cmp(&cmi[a.0][a.1]));

    let mut uf: Vec<usize> = (0..l).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adj = vec![Vec::new(); l];
    let mut used = 0;
    for (i, j) in edges {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            adj[i].push(j);
            adj[j].push(i);
            used += 1;
            if used == l - 1 {
                break;
            }
        }
    }
    let mut parents = vec![None; l];
    let mut seen = vec![false; l];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        let mut next = adj[u].clone();
        next.sort_unstable();
        for v in next {
            if !seen[v] {
                seen[v] = true;
                parents[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    Structure::new(data.n_classes(), data.cardinalities().to_vec(), parents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nb_parents_are_class_only() {
        let s = learn_structure_nb(2, &[2, 3, 2]).unwrap();
        assert_eq!(s.parents(), &[None, None, None]);
        assert!(s.is_naive());
        let s = learn_structure_nb(2, &[4]).unwrap();
        assert_eq!(s.n_features(), 1);
        assert_eq!(s.free_parameters(), 1 + 2 * 3);
    }

    #[test]
    fn rejects_cycles_and_bad_parents() {
        assert!(Structure::new(2, vec![2, 2], vec![Some(1), Some(0)]).is_err());
        assert!(Structure::new(2, vec![2, 2], vec![Some(0), None]).is_err());
        assert!(Structure::new(2, vec![2, 2], vec![Some(5), None]).is_err());
        assert!(Structure::new(2, vec![2, 2, 2], vec![None, Some(0), Some(1)]).is_ok());
    }

    /// Enumerated CMI over the empirical joint with the same smoothing.
    fn brute_cmi(rows: &[[u8; 3]], labels: &[usize], i: usize, j: usize) -> f64 {
        let mut joint = [[[CMI_SMOOTHING; 2]; 2]; 2];
        for (r, &c) in rows.iter().zip(labels) {
            joint[c][r[i] as usize][r[j] as usize] += 1.0;
        }
        let total: f64 = joint.iter().flatten().flatten().sum();
        let mut cmi = 0.0;
        for c in 0..2 {
            let pc: f64 = joint[c].iter().flatten().sum::<f64>() / total;
            for a in 0..2 {
                for b in 0..2 {
                    let p = joint[c][a][b] / total;
                    let pa = (joint[c][a][0] + joint[c][a][1]) / total;
                    let pb = (joint[c][0][b] + joint[c][1][b]) / total;
                    cmi += p * ((p / pc) / ((pa / pc) * (pb / pc))).ln();
                }
            }
        }
        cmi
    }

    #[test]
    fn tan_links_deterministic_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20 {
            let x1: u8 = rng.gen_range(0..2);
            let x3: u8 = rng.gen_range(0..2);
            rows.push([x1, x1, x3]);
            labels.push(rng.gen_range(0..2));
        }
        let d = DiscreteDataset::new(rows.iter().flatten().copied().collect(), vec![2, 2, 2], labels.clone(), 2).unwrap();
        let cmi = conditional_mutual_information(&d, CMI_SMOOTHING);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((cmi[i][j] - brute_cmi(&rows, &labels, i, j)).abs() < 1e-12);
        }
        assert!(cmi[0][1] > cmi[0][2] && cmi[0][1] > cmi[1][2]);
        let s = learn_structure_tan(&d).unwrap();
        assert_eq!(s.parent(1), Some(0));
        assert_eq!(s.parent(0), None);
    }

    #[test]
    fn tan_on_independent_features_is_a_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, l) = (200, 6);
        let feats: Vec<u8> = (0..n * l).map(|_| rng.gen_range(0..3)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let d = DiscreteDataset::new(feats, vec![3; l], labels, 2).unwrap();
        let s = learn_structure_tan(&d).unwrap();
        let roots = s.parents().iter().filter(|p| p.is_none()).count();
        assert_eq!(roots, 1);
        assert_eq!(s.parent(0), None);
        assert_eq!(s.topological_order().len(), l);
    }

    #[test]
    fn tan_with_one_feature_is_nb() {
        let d = DiscreteDataset::new(vec![0, 1], vec![2], vec![0, 1], 2).unwrap();
        assert!(learn_structure_tan(&d).unwrap().is_naive());
    }

    #[test]
    fn topological_order_puts_parents_first() {
        let s = Structure::new(2, vec![2; 4], vec![Some(2), None, Some(1), Some(0)]).unwrap();
        let order = s.topological_order();
        let pos = |i: usize| order.iter().position(|&x| x == i).unwrap();
        for i in 0..4 {
            if let Some(p) = s.parent(i) {
                assert!(pos(p) < pos(i));
            }
        }
    }
}
