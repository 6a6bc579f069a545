//! Collaboration network of home-region organisations and their external
//! partners, plus a Fruchterman–Reingold layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entity_resolution::{OrgType, Organisation};
use crate::ingest::Participation;
use crate::money::Eur;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Node {
    pub org_id: String,
    pub display_name: String,
    pub org_type: OrgType,
    pub investment: Eur,
    pub project_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Edge {
    pub org_a: String,
    pub org_b: String,
    pub weight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollaborationGraph {
    /// Sorted by org id.
    pub nodes: Vec<Node>,
    /// Sorted by (org_a, org_b) with org_a < org_b.
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExternalPartner {
    pub org_id: String,
    pub display_name: String,
    pub country: String,
    pub shared_project_count: usize,
    pub linked_home_orgs: BTreeSet<String>,
}

/// Participations of the selected projects that carry a resolved org id,
/// grouped by project.
fn by_project<'a>(
    project_ids: &BTreeSet<String>,
    participations: &'a [Participation],
) -> BTreeMap<&'a str, Vec<&'a Participation>> {
    let mut out: BTreeMap<&str, Vec<&Participation>> = BTreeMap::new();
    for p in participations {
        if p.org_id.is_some() && project_ids.contains(&p.project_id) {
            out.entry(p.project_id.as_str()).or_default().push(p);
        }
    }
    out
}

fn index(organisations: &[Organisation]) -> HashMap<&str, &Organisation> {
    organisations.iter().map(|o| (o.org_id.as_str(), o)).collect()
}

/// Nodes are home-region organisations on at least one selected project;
/// edges join home-region pairs by the number of distinct shared projects.
pub fn build_graph(
    project_ids: &BTreeSet<String>,
    participations: &[Participation],
    organisations: &[Organisation],
) -> CollaborationGraph {
    let orgs = index(organisations);
    let is_home = |id: &str| orgs.get(id).is_some_and(|o| o.is_home_region);
    let mut investment: BTreeMap<&str, Eur> = BTreeMap::new();
    let mut projects: BTreeMap<&str, usize> = BTreeMap::new();
    let mut weights: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for parts in by_project(project_ids, participations).values() {
        let mut members = BTreeSet::new();
        for p in parts {
            let id = p.org_id.as_deref().unwrap();
            if is_home(id) {
                *investment.entry(id).or_default() += p.contribution;
                members.insert(id);
            }
        }
        let members: Vec<&str> = members.into_iter().collect();
        for (i, a) in members.iter().enumerate() {
            *projects.entry(a).or_default() += 1;
            for b in &members[i + 1..] {
                *weights.entry((a, b)).or_default() += 1;
            }
        }
    }
    CollaborationGraph {
        nodes: investment
            .into_iter()
            .map(|(id, inv)| {
                let o = orgs[id];
                Node {
                    org_id: id.to_string(),
                    display_name: o.display_name.clone(),
                    org_type: o.org_type,
                    investment: inv,
                    project_count: projects[id],
                }
            })
            .collect(),
        edges: weights
            .into_iter()
            .map(|((a, b), weight)| Edge {
                org_a: a.to_string(),
                org_b: b.to_string(),
                weight,
            })
            .collect(),
    }
}

/// Organisations outside the home region counted over selected projects that
/// also involve at least one home-region organisation.
pub fn rank_external_partners(
    project_ids: &BTreeSet<String>,
    participations: &[Participation],
    organisations: &[Organisation],
    top_n: Option<usize>,
) -> Vec<ExternalPartner> {
    let orgs = index(organisations);
    let mut acc: BTreeMap<&str, (usize, BTreeSet<String>)> = BTreeMap::new();
    for parts in by_project(project_ids, participations).values() {
        let (home, external): (BTreeSet<&str>, BTreeSet<&str>) = {
            let ids: BTreeSet<&str> = parts.iter().map(|p| p.org_id.as_deref().unwrap()).collect();
            ids.into_iter()
                .filter(|id| orgs.contains_key(id))
                .partition(|id| orgs[id].is_home_region)
        };
        if home.is_empty() {
            continue;
        }
        for ext in external {
            let entry = acc.entry(ext).or_default();
            entry.0 += 1;
            entry.1.extend(home.iter().map(|h| h.to_string()));
        }
    }
    let mut out: Vec<ExternalPartner> = acc
        .into_iter()
        .map(|(id, (count, linked))| {
            let o = orgs[id];
            ExternalPartner {
                org_id: id.to_string(),
                display_name: o.display_name.clone(),
                country: o.country.clone(),
                shared_project_count: count,
                linked_home_orgs: linked,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.shared_project_count
            .cmp(&a.shared_project_count)
            .then_with(|| a.display_name.cmp(&b.display_name))
            .then_with(|| a.org_id.cmp(&b.org_id))
    });
    if let Some(n) = top_n {
        out.truncate(n);
    }
    out
}

impl CollaborationGraph {
    pub fn total_investment(&self) -> Eur {
        self.nodes.iter().map(|n| n.investment).sum()
    }

    pub fn write_nodes_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["orgId", "displayName", "orgType", "investment", "projectCount"])?;
        for n in &self.nodes {
            w.write_record([
                n.org_id.as_str(),
                &n.display_name,
                n.org_type.as_str(),
                &n.investment.to_string(),
                &n.project_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_edges_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["orgA", "orgB", "weight"])?;
        for e in &self.edges {
            w.write_record([e.org_a.as_str(), &e.org_b, &e.weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_external_csv<W: std::io::Write>(partners: &[ExternalPartner], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["orgId", "displayName", "country", "sharedProjectCount", "linkedHomeOrgs"])?;
    for p in partners {
        let linked: Vec<&str> = p.linked_home_orgs.iter().map(String::as_str).collect();
        w.write_record([
            p.org_id.as_str(),
            &p.display_name,
            &p.country,
            &p.shared_project_count.to_string(),
            &linked.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Ideal spring length of the layout.
pub const SPRING_LENGTH: f64 = 1.0;

fn components(graph: &CollaborationGraph) -> Vec<Vec<usize>> {
    let n = graph.nodes.len();
    let pos: HashMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.org_id.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in &graph.edges {
        let (a, b) = (find(&mut parent, pos[e.org_a.as_str()]), find(&mut parent, pos[e.org_b.as_str()]));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    // Larger components first; ties keep the order of their smallest node.
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Seeded Fruchterman–Reingold. Each connected component is laid out on its
/// own and the components are then placed left to right without overlap.
/// With zero iterations the seeded initial positions are returned as is.
pub fn layout_force(graph: &CollaborationGraph, iterations: usize, seed: u64) -> BTreeMap<String, [f64; 2]> {
    let n = graph.nodes.len();
    let k = SPRING_LENGTH;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (n.max(1) as f64).sqrt() * k;
    let mut pos: Vec<[f64; 2]> = (0..n)
        .map(|_| [(rng.random::<f64>() - 0.5) * width, (rng.random::<f64>() - 0.5) * width])
        .collect();
    let named = |pos: &[[f64; 2]]| {
        graph
            .nodes
            .iter()
            .zip(pos)
            .map(|(node, p)| (node.org_id.clone(), *p))
            .collect()
    };
    if iterations == 0 {
        return named(&pos);
    }
    let index: HashMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.org_id.as_str(), i)).collect();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &graph.edges {
        let (a, b) = (index[e.org_a.as_str()], index[e.org_b.as_str()]);
        let w = (1.0 + e.weight as f64).ln();
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    }

    let mut offset_x = 0.0;
    for comp in components(graph) {
        let t0 = 0.1 * (comp.len() as f64).sqrt().max(1.0) * k;
        for it in 0..iterations {
            let temperature = t0 * (1.0 - it as f64 / iterations as f64);
            let mut disp = vec![[0.0f64; 2]; comp.len()];
            for (a, &i) in comp.iter().enumerate() {
                for &j in &comp {
                    if i == j {
                        continue;
                    }
                    let (dx, dy) = (pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
                    let d = (dx * dx + dy * dy).sqrt().max(1e-9);
                    let f = k * k / d;
                    disp[a][0] += dx / d * f;
                    disp[a][1] += dy / d * f;
                }
                for &(j, w) in &adjacency[i] {
                    let (dx, dy) = (pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
                    let d = (dx * dx + dy * dy).sqrt().max(1e-9);
                    let f = d * d / k * w;
                    disp[a][0] -= dx / d * f;
                    disp[a][1] -= dy / d * f;
                }
            }
            for (a, &i) in comp.iter().enumerate() {
                let len = (disp[a][0].powi(2) + disp[a][1].powi(2)).sqrt();
                if len > 0.0 {
                    let step = len.min(temperature);
                    pos[i][0] += disp[a][0] / len * step;
                    pos[i][1] += disp[a][1] / len * step;
                }
            }
        }
        let min_x = comp.iter().map(|&i| pos[i][0]).fold(f64::INFINITY, f64::min);
        let max_x = comp.iter().map(|&i| pos[i][0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = comp.iter().map(|&i| pos[i][1]).fold(f64::INFINITY, f64::min);
        let max_y = comp.iter().map(|&i| pos[i][1]).fold(f64::NEG_INFINITY, f64::max);
        let mid_y = 0.5 * (min_y + max_y);
        for &i in &comp {
            pos[i][0] += offset_x - min_x;
            pos[i][1] -= mid_y;
        }
        offset_x += (max_x - min_x) + k;
    }
    named(&pos)
}

pub fn write_layout_csv<W: std::io::Write>(layout: &BTreeMap<String, [f64; 2]>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["orgId", "x", "y"])?;
    for (id, [x, y]) in layout {
        w.write_record([id.as_str(), &x.to_string(), &y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Role;

    fn org(id: &str, home: bool) -> Organisation {
        Organisation {
            org_id: id.into(),
            display_name: format!("Org {id}"),
            aliases: BTreeSet::new(),
            org_type: OrgType::Company,
            country: if home { "ES".into() } else { "FR".into() },
            province: if home { "Barcelona".into() } else { String::new() },
            is_home_region: home,
        }
    }

    fn part(project: &str, org: &str, euros: i64) -> Participation {
        Participation {
            project_id: project.into(),
            raw_org_name: org.into(),
            country: String::new(),
            province: String::new(),
            org_type_raw: String::new(),
            activity_type: String::new(),
            role: Role::Partner,
            contribution: Eur::from_euros(euros),
            org_id: Some(org.into()),
        }
    }

    fn ids(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn investment_and_edge_weights() {
        let orgs = vec![org("A", true), org("B", true), org("X", false)];
        let parts = vec![
            part("p1", "A", 100000),
            part("p1", "B", 5),
            part("p2", "A", 200000),
            part("p2", "B", 5),
            part("p3", "A", 1),
            part("p3", "B", 1),
            part("p3", "X", 1),
        ];
        let g = build_graph(&ids(&["p1", "p2", "p3"]), &parts, &orgs);
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.nodes[0].investment, Eur::from_euros(300001));
        assert_eq!(g.edges, vec![Edge { org_a: "A".into(), org_b: "B".into(), weight: 3 }]);

        let g = build_graph(&ids(&["p1", "p2"]), &parts, &orgs);
        assert_eq!(g.nodes[0].investment, Eur::from_euros(300000));

        let solo = vec![part("q1", "A", 1), part("q2", "B", 1)];
        assert!(build_graph(&ids(&["q1", "q2"]), &solo, &orgs).edges.is_empty());
    }

    #[test]
    fn external_partners_ranked() {
        let orgs = vec![org("A", true), org("B", true), org("X", false), org("Y", false), org("Z", false)];
        let mut parts = Vec::new();
        for i in 0..5 {
            let p = format!("p{i}");
            parts.push(part(&p, "X", 1));
            parts.push(part(&p, if i < 3 { "A" } else { "B" }, 1));
        }
        for i in 0..3 {
            let p = format!("q{i}");
            parts.push(part(&p, "Z", 1));
            parts.push(part(&p, "Y", 1));
            parts.push(part(&p, "A", 1));
        }
        let all: BTreeSet<String> = parts.iter().map(|p| p.project_id.clone()).collect();
        let ranked = rank_external_partners(&all, &parts, &orgs, None);
        assert_eq!(ranked[0].org_id, "X");
        assert_eq!(ranked[0].shared_project_count, 5);
        assert_eq!(ranked[0].linked_home_orgs, ids(&["A", "B"]));
        assert_eq!(
            ranked[1..].iter().map(|p| p.display_name.as_str()).collect::<Vec<_>>(),
            vec!["Org Y", "Org Z"]
        );
        let home_only = vec![part("p", "A", 1)];
        assert!(rank_external_partners(&ids(&["p"]), &home_only, &orgs, None).is_empty());
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> CollaborationGraph {
        let nodes = (0..n)
            .map(|i| Node {
                org_id: format!("N{i:02}"),
                display_name: String::new(),
                org_type: OrgType::Other,
                investment: Eur::ZERO,
                project_count: 1,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(a, b)| Edge { org_a: format!("N{a:02}"), org_b: format!("N{b:02}"), weight: 1 })
            .collect();
        CollaborationGraph { nodes, edges }
    }

    #[test]
    fn two_node_spring_length() {
        let g = graph(2, &[(0, 1)]);
        for seed in 0..10 {
            let l = layout_force(&g, 200, seed);
            let (a, b) = (l["N00"], l["N01"]);
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((0.5..=2.0).contains(&d), "seed {seed}: {d}");
        }
    }

    #[test]
    fn zero_iterations_returns_initial_positions() {
        let g = graph(4, &[(0, 1), (2, 3)]);
        assert_eq!(layout_force(&g, 0, 3), layout_force(&g, 0, 3));
        assert_ne!(layout_force(&g, 0, 3), layout_force(&g, 0, 4));
        assert_ne!(layout_force(&g, 0, 3), layout_force(&g, 10, 3));
    }
}
