//! Dendrograms, accuracy trajectories and feature rankings over language
//! embeddings.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpora::{feature_id_cmp, WalsTable};
use crate::error::{Error, Result};
use crate::langspace::{cosine_similarity, EmbeddingStore, SnapshotSeries};
use crate::typology::{evaluate_splits, feature_splits, EvalOptions, EvalResult, FeatureDataset, Instance, SplitSpec};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    languages: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn new(languages: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = languages.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("distance matrix is not {n}×{n}")));
        }
        for i in 0..n {
            if values[i][i] != 0.0 {
                return Err(Error::Invalid(format!("non-zero diagonal at {}", languages[i])));
            }
            for (j, &v) in values[i].iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Invalid(format!("distance {v} at ({i}, {j})")));
                }
                if (v - values[j][i]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Invalid(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &languages {
            if !seen.insert(l) {
                return Err(Error::duplicate("language", l));
            }
        }
        Ok(DistanceMatrix { languages, values })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Pairwise `1 − cosine` distances, clamped at zero.
pub fn embedding_distance_matrix<S: AsRef<str>>(store: &EmbeddingStore, languages: &[S]) -> Result<DistanceMatrix> {
    let vectors = languages
        .iter()
        .map(|l| store.get(l.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let n = vectors.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (1.0 - cosine_similarity(vectors[i], vectors[j])?).max(0.0);
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    DistanceMatrix::new(languages.iter().map(|l| l.as_ref().to_string()).collect(), values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub height: f64,
    /// Children as node indices; leaves have none.
    pub children: Option<(usize, usize)>,
    /// Leaf languages below this node, sorted.
    pub leaves: Vec<String>,
}

impl Node {
    /// Smallest leaf code, used to name clusters in tie-breaks.
    pub fn label(&self) -> &str {
        &self.leaves[0]
    }
}

/// Binary merge tree. Nodes `0..n` are leaves in input order; every later
/// node is a merge, in merge order, so the last node is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    nodes: Vec<Node>,
    leaf_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Merge {
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub height: f64,
}

impl Dendrogram {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn merges(&self) -> Vec<Merge> {
        self.nodes[self.leaf_count..]
            .iter()
            .map(|n| {
                let (a, b) = n.children.expect("internal node");
                Merge {
                    left: self.nodes[a].leaves.clone(),
                    right: self.nodes[b].leaves.clone(),
                    height: n.height,
                }
            })
            .collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.nodes[self.leaf_count..].iter().map(|n| n.height).collect()
    }

    /// Leaves in drawing order (depth-first, left child first).
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaf_count);
        let mut stack = vec![self.root()];
        while let Some(i) = stack.pop() {
            match self.nodes[i].children {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => out.push(i),
            }
        }
        out
    }

    fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some((a, b)) = n.children {
                parent[a] = Some(i);
                parent[b] = Some(i);
            }
        }
        parent
    }

    /// Heights of the nodes on the path from leaf `leaf` up to the root.
    pub fn path_heights(&self, leaf: usize) -> Vec<f64> {
        let parent = self.parents();
        let mut out = vec![self.nodes[leaf].height];
        let mut cur = leaf;
        while let Some(p) = parent[cur] {
            out.push(self.nodes[p].height);
            cur = p;
        }
        out
    }

    /// Height of the lowest common ancestor of two leaves.
    pub fn cophenetic(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let parent = self.parents();
        let mut ancestors = std::collections::BTreeSet::new();
        let mut cur = Some(a);
        while let Some(c) = cur {
            ancestors.insert(c);
            cur = parent[c];
        }
        let mut cur = Some(b);
        while let Some(c) = cur {
            if ancestors.contains(&c) {
                return self.nodes[c].height;
            }
            cur = parent[c];
        }
        unreachable!("leaves share the root")
    }

    /// Newick text with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        fn write(d: &Dendrogram, i: usize, parent_height: f64, out: &mut String) {
            let node = &d.nodes[i];
            match node.children {
                Some((a, b)) => {
                    out.push('(');
                    write(d, a, node.height, out);
                    out.push(',');
                    write(d, b, node.height, out);
                    out.push(')');
                }
                None => out.push_str(&newick_label(node.label())),
            }
            let _ = write!(out, ":{}", parent_height - node.height);
        }
        let root = self.root();
        let mut out = String::new();
        match self.nodes[root].children {
            Some((a, b)) => {
                out.push('(');
                write(self, a, self.nodes[root].height, &mut out);
                out.push(',');
                write(self, b, self.nodes[root].height, &mut out);
                out.push(')');
            }
            None => out.push_str(&newick_label(self.nodes[root].label())),
        }
        out.push(';');
        out
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

fn label_pair(nodes: &[Node], a: usize, b: usize) -> (&str, &str) {
    let (x, y) = (nodes[a].label(), nodes[b].label());
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Average-linkage agglomerative clustering. Merge height is half the
/// inter-cluster distance; equal distances are resolved by the
/// lexicographically smallest pair of cluster labels.
pub fn upgma(d: &DistanceMatrix) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Invalid("clustering needs at least 2 languages".into()));
    }
    let mut nodes: Vec<Node> = d
        .languages
        .iter()
        .map(|l| Node {
            height: 0.0,
            children: None,
            leaves: vec![l.clone()],
        })
        .collect();
    let total = 2 * n - 1;
    let mut dist = vec![vec![0.0; total]; total];
    for (i, row) in d.values.iter().enumerate() {
        dist[i][..n].copy_from_slice(row);
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let dv = dist[a][b];
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        dv < bd || (dv == bd && label_pair(&nodes, a, b) < label_pair(&nodes, ba, bb))
                    }
                };
                if better {
                    best = Some((dv, a, b));
                }
            }
        }
        let (dv, a, b) = best.expect("at least one pair");
        let (a, b) = if nodes[a].label() <= nodes[b].label() { (a, b) } else { (b, a) };
        let new = nodes.len();
        let height = (dv / 2.0).max(nodes[a].height).max(nodes[b].height);
        let mut leaves = nodes[a].leaves.clone();
        leaves.extend(nodes[b].leaves.iter().cloned());
        leaves.sort();
        nodes.push(Node {
            height,
            children: Some((a, b)),
            leaves,
        });
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        active.retain(|&c| c != a && c != b);
        for &c in &active {
            let v = (sa * dist[a][c] + sb * dist[b][c]) / (sa + sb);
            dist[c][new] = v;
            dist[new][c] = v;
        }
        size[new] = size[a] + size[b];
        active.push(new);
    }
    Ok(Dendrogram {
        nodes,
        leaf_count: n,
    })
}

/// Horizontal pixels per unit of merge height.
pub const SVG_PX_PER_UNIT: f64 = 400.0;
const SVG_LABEL_WIDTH: f64 = 120.0;
const SVG_ROW: f64 = 20.0;
const SVG_MARGIN: f64 = 10.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG: leaf labels on the left, merges drawn to the right at
/// `SVG_PX_PER_UNIT` pixels per unit height.
pub fn render_dendrogram_svg(tree: &Dendrogram) -> String {
    let base_x = SVG_MARGIN + SVG_LABEL_WIDTH;
    let order = tree.leaf_order();
    let mut y = vec![0.0; tree.nodes.len()];
    let mut x = vec![base_x; tree.nodes.len()];
    for (row, &leaf) in order.iter().enumerate() {
        y[leaf] = SVG_MARGIN + SVG_ROW * (row as f64 + 0.5);
    }
    for i in tree.leaf_count..tree.nodes.len() {
        let (a, b) = tree.nodes[i].children.expect("internal node");
        y[i] = (y[a] + y[b]) / 2.0;
        x[i] = base_x + tree.nodes[i].height * SVG_PX_PER_UNIT;
    }
    let max_height = tree.nodes[tree.root()].height;
    let width = base_x + max_height * SVG_PX_PER_UNIT + 2.0 * SVG_MARGIN;
    let height = 2.0 * SVG_MARGIN + SVG_ROW * tree.leaf_count as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    out.push_str("<g font-family=\"sans-serif\" font-size=\"12\" stroke=\"black\" fill=\"none\">\n");
    for &leaf in &order {
        let _ = writeln!(
            out,
            r#"<text class="leaf" x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle" stroke="none" fill="black">{}</text>"#,
            base_x - 4.0,
            y[leaf],
            xml_escape(tree.nodes[leaf].label())
        );
    }
    for i in tree.leaf_count..tree.nodes.len() {
        let (a, b) = tree.nodes[i].children.expect("internal node");
        let _ = writeln!(
            out,
            r#"<line class="junction" x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}"/>"#,
            x[i], y[a], x[i], y[b]
        );
        for c in [a, b] {
            let _ = writeln!(
                out,
                r#"<line class="branch" x1="{:.4}" y1="{:.4}" x2="{:.4}" y2="{:.4}"/>"#,
                x[c], y[c], x[i], y[c]
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: u64,
    pub accuracy: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAccuracyTrajectory {
    pub feature_id: String,
    pub points: Vec<TrajectoryPoint>,
}

impl FeatureAccuracyTrajectory {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\taccuracy\tbaseline\n");
        for p in &self.points {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", p.iteration, p.accuracy, p.baseline);
        }
        out
    }
}

/// Classifier and baseline accuracy of one feature at every snapshot.
/// Splits are drawn once, from the first snapshot's languages, and reused.
pub fn accuracy_trajectory(
    series: &SnapshotSeries,
    wals: &WalsTable,
    feature_id: &str,
    split: &SplitSpec,
    options: &EvalOptions,
) -> Result<FeatureAccuracyTrajectory> {
    split.validate()?;
    let (_, first) = series
        .first()
        .ok_or_else(|| Error::Empty("snapshot series".into()))?;
    let dataset = FeatureDataset::build(first, wals, feature_id, options.languages.as_ref())?;
    let splits = feature_splits(&dataset, wals, split)
        .ok_or_else(|| Error::Invalid(format!("feature {feature_id} cannot be evaluated")))?;
    let codes: Vec<(Vec<&Instance>, Vec<&Instance>)> = splits
        .iter()
        .map(|(tr, te)| (tr.iter().collect(), te.iter().collect()))
        .collect();
    let mut points = Vec::with_capacity(series.len());
    for (iteration, store) in series.iter() {
        let rebind = |part: &[&Instance]| -> Result<Vec<Instance>> {
            part.iter()
                .map(|i| {
                    Ok(Instance {
                        language: i.language.clone(),
                        vector: store.get(&i.language)?.to_vec(),
                        value: i.value.clone(),
                    })
                })
                .collect()
        };
        let current = codes
            .iter()
            .map(|(tr, te)| Ok((rebind(tr)?, rebind(te)?)))
            .collect::<Result<Vec<_>>>()?;
        let (accuracy, baseline, _) = evaluate_splits(&current, options.k, options.metric)?;
        points.push(TrajectoryPoint {
            iteration,
            accuracy,
            baseline,
        });
    }
    Ok(FeatureAccuracyTrajectory {
        feature_id: feature_id.to_string(),
        points,
    })
}

/// Cosine similarity of each language pair at every snapshot, as TSV with
/// one column per pair.
pub fn similarity_trajectory_tsv(series: &SnapshotSeries, pairs: &[(String, String)]) -> Result<String> {
    let mut out = String::from("iteration");
    for (a, b) in pairs {
        let _ = write!(out, "\t{a}~{b}");
    }
    out.push('\n');
    let columns = pairs
        .iter()
        .map(|(a, b)| series.trajectory(a, b))
        .collect::<Result<Vec<_>>>()?;
    for (row, iteration) in series.iterations().into_iter().enumerate() {
        let _ = write!(out, "{iteration}");
        for c in &columns {
            let _ = write!(out, "\t{:.6}", c[row].1);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Line plot of accuracy trajectories, one polyline per feature.
pub fn render_trajectory_svg(trajectories: &[FeatureAccuracyTrajectory]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 240.0;
    const PAD: f64 = 40.0;
    let max_iter = trajectories
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.iteration))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let sx = |i: u64| PAD + (W - 2.0 * PAD) * i as f64 / max_iter;
    let sy = |a: f64| H - PAD - (H - 2.0 * PAD) * a;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        out,
        r#"<g stroke="black"><line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}"/></g>"#,
        H - PAD,
        W - PAD
    );
    for (i, t) in trajectories.iter().enumerate() {
        let colour = palette[i % palette.len()];
        let knn: Vec<String> = t.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.iteration), sy(p.accuracy))).collect();
        let base: Vec<String> = t.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.iteration), sy(p.baseline))).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="knn" fill="none" stroke="{colour}" points="{}"><title>{}</title></polyline>"#,
            knn.join(" "),
            xml_escape(&t.feature_id)
        );
        let _ = writeln!(
            out,
            r#"<polyline class="baseline" fill="none" stroke="{colour}" stroke-dasharray="4 3" points="{}"/>"#,
            base.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedFeature {
    pub feature_id: String,
    pub chapter: String,
    pub accuracy: f64,
}

impl fmt::Display for RankedFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.2}", self.feature_id, self.chapter, self.accuracy * 100.0)
    }
}

/// Best and worst `n` features by classifier accuracy, ties by feature id.
pub fn rank_features(result: &EvalResult, n: usize) -> Result<(Vec<RankedFeature>, Vec<RankedFeature>)> {
    if 2 * n > result.features.len() {
        return Err(Error::Invalid(format!(
            "ranking {n} + {n} features needs at least {} evaluated features, got {}",
            2 * n,
            result.features.len()
        )));
    }
    let mut all: Vec<RankedFeature> = result
        .features
        .iter()
        .map(|f| RankedFeature {
            feature_id: f.feature_id.clone(),
            chapter: f.chapter.clone(),
            accuracy: f.accuracy,
        })
        .collect();
    all.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then_with(|| feature_id_cmp(&a.feature_id, &b.feature_id))
    });
    let bottom = all[all.len() - n..].to_vec();
    all.truncate(n);
    Ok((all, bottom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(names: &[&str], v: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::new(names.iter().map(|s| s.to_string()).collect(), v).unwrap()
    }

    #[test]
    fn two_leaves() {
        let t = upgma(&matrix(&["A", "B"], vec![vec![0.0, 2.0], vec![2.0, 0.0]])).unwrap();
        assert_eq!(t.heights(), [1.0]);
        assert_eq!(t.to_newick(), "(A:1,B:1);");
    }

    #[test]
    fn three_leaf_trace() {
        let d = matrix(
            &["A", "B", "C"],
            vec![vec![0.0, 2.0, 6.0], vec![2.0, 0.0, 6.0], vec![6.0, 6.0, 0.0]],
        );
        let t = upgma(&d).unwrap();
        let m = t.merges();
        assert_eq!((m[0].left.clone(), m[0].right.clone(), m[0].height), (vec!["A".into()], vec!["B".into()], 1.0));
        assert_eq!(m[1].height, 3.0);
        assert_eq!(m[1].right, ["C"]);
        assert_eq!(t.to_newick(), "((A:1,B:1):2,C:3);");
    }

    #[test]
    fn rejects_bad_matrices() {
        let names = || vec!["A".to_string(), "B".to_string()];
        assert!(DistanceMatrix::new(names(), vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(names(), vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(names(), vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(names(), vec![vec![0.0]]).is_err());
        assert!(upgma(&matrix(&["A"], vec![vec![0.0]])).is_err());
    }

    #[test]
    fn cosine_matrix() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert("x", vec![1.0, 0.0]).unwrap();
        s.insert("y", vec![0.0, 3.0]).unwrap();
        s.insert("z", vec![2.0, 0.0]).unwrap();
        let d = embedding_distance_matrix(&s, &["x", "y", "z"]).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(0, 2), 0.0);
        assert!(embedding_distance_matrix(&s, &["x", "w"]).is_err());
    }

    #[test]
    fn svg_two_leaves() {
        let t = upgma(&matrix(&["A&B", "C"], vec![vec![0.0, 0.5], vec![0.5, 0.0]])).unwrap();
        let svg = render_dendrogram_svg(&t);
        assert_eq!(svg.matches("class=\"junction\"").count(), 1);
        assert!(svg.contains(">A&amp;B<"));
        assert!(svg.contains(">C<"));
    }
}
