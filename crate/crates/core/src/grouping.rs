//! Building groups (the alignment sites) and their neighbourhood graph.

use std::collections::HashMap;

use crate::error::Result;
use crate::geometry::{rasterize, Footprint, Mask, Point};
use crate::scalar::Scalar;

/// Link distance between building centers, in meters.
pub const DEFAULT_LINK_DISTANCE_M: f64 = 21.0;
/// Number of nearest groups each group is connected to.
pub const DEFAULT_KNN: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingGroup<T> {
    pub id: usize,
    /// Indices into the footprint slice the group was built from.
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    /// Mean of the member polygon centroids.
    pub centroid: Point<T>,
    pub union_mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupGraph<T> {
    pub groups: Vec<BuildingGroup<T>>,
    /// Sorted, symmetric neighbour lists.
    pub neighbors: Vec<Vec<usize>>,
}

impl<T> GroupGraph<T> {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clustering of footprints whose centroids are closer than
/// `link_distance_m` meters. Group ids follow the smallest member centroid in
/// (y, x) order, so the result does not depend on input order.
pub fn group_buildings<T: Scalar>(
    footprints: &[Footprint<T>],
    resolution: T,
    link_distance_m: T,
) -> Result<Vec<BuildingGroup<T>>> {
    let link_px = link_distance_m / resolution;
    let centroids: Vec<Point<T>> = footprints.iter().map(|f| f.polygon.centroid()).collect();
    let mut sets = DisjointSet::new(footprints.len());

    if link_px > T::zero() {
        // Bucket centroids on a grid of link-sized cells; only adjacent cells can link.
        let cell_of = |p: &Point<T>| {
            (
                (p.x / link_px).floor().to_i64().unwrap_or(0),
                (p.y / link_px).floor().to_i64().unwrap_or(0),
            )
        };
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, c) in centroids.iter().enumerate() {
            cells.entry(cell_of(c)).or_default().push(i);
        }
        for (i, c) in centroids.iter().enumerate() {
            let (cx, cy) = cell_of(c);
            for nx in cx - 1..=cx + 1 {
                for ny in cy - 1..=cy + 1 {
                    for &j in cells.get(&(nx, ny)).map(Vec::as_slice).unwrap_or(&[]) {
                        if j > i && c.distance(&centroids[j]) < link_px {
                            sets.union(i, j);
                        }
                    }
                }
            }
        }
    }

    let mut components: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..footprints.len() {
        components.entry(sets.find(i)).or_default().push(i);
    }

    let yx_order = |a: &usize, b: &usize| {
        let (pa, pb) = (&centroids[*a], &centroids[*b]);
        pa.y.partial_cmp(&pb.y)
            .unwrap()
            .then(pa.x.partial_cmp(&pb.x).unwrap())
            .then_with(|| footprints[*a].id.cmp(&footprints[*b].id))
    };
    let mut members: Vec<Vec<usize>> = components.into_values().collect();
    for m in &mut members {
        m.sort_by(yx_order);
    }
    members.sort_by(|a, b| yx_order(&a[0], &b[0]));

    members
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let masks = members
                .iter()
                .map(|&i| rasterize(&footprints[i].polygon))
                .collect::<Result<Vec<_>>>()?;
            let n = T::from_usize(members.len()).unwrap();
            let (sx, sy) = members.iter().fold((T::zero(), T::zero()), |(sx, sy), &i| {
                (sx + centroids[i].x, sy + centroids[i].y)
            });
            Ok(BuildingGroup {
                id,
                member_ids: members.iter().map(|&i| footprints[i].id.clone()).collect(),
                members,
                centroid: Point::new(sx / n, sy / n),
                union_mask: Mask::union_of(&masks),
            })
        })
        .collect()
}

/// One site per footprint, ordered like [`group_buildings`].
pub fn singleton_groups<T: Scalar>(footprints: &[Footprint<T>]) -> Result<Vec<BuildingGroup<T>>> {
    group_buildings(footprints, T::one(), T::zero())
}

/// For every group, the `k` nearest other groups by centroid distance (ties by lower id).
pub fn nearest_groups<T: Scalar>(groups: &[BuildingGroup<T>], k: usize) -> Vec<Vec<usize>> {
    groups
        .iter()
        .map(|g| {
            let mut others: Vec<(T, usize)> = groups
                .iter()
                .filter(|o| o.id != g.id)
                .map(|o| {
                    let (dx, dy) = (o.centroid.x - g.centroid.x, o.centroid.y - g.centroid.y);
                    (dx * dx + dy * dy, o.id)
                })
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, id)| id).collect()
        })
        .collect()
}

/// k-nearest-neighbour graph over groups, symmetrized.
pub fn build_graph<T: Scalar>(groups: Vec<BuildingGroup<T>>, k: usize) -> GroupGraph<T> {
    debug_assert!(groups.iter().enumerate().all(|(i, g)| g.id == i));
    let directed = nearest_groups(&groups, k);
    let mut neighbors = directed.clone();
    for (i, list) in directed.iter().enumerate() {
        for &j in list {
            neighbors[j].push(i);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    GroupGraph { groups, neighbors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Source};

    fn building(id: &str, cx: f64, cy: f64) -> Footprint<f64> {
        Footprint::new(
            id,
            Polygon::rect(cx - 3.0, cy - 3.0, cx + 3.0, cy + 3.0).unwrap(),
            Source::Original,
        )
    }

    // 0.3 m/px: 21 m = 70 px.
    const RES: f64 = 0.3;

    #[test]
    fn buildings_twenty_meters_apart_share_a_group() {
        let fps = vec![building("a", 100.0, 100.0), building("b", 100.0 + 20.0 / RES, 100.0)];
        let groups = group_buildings(&fps, RES, 21.0).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].member_ids, vec!["a", "b"]);
    }

    #[test]
    fn buildings_twenty_five_meters_apart_stay_apart() {
        let fps = vec![building("a", 100.0, 100.0), building("b", 100.0 + 25.0 / RES, 100.0)];
        let groups = group_buildings(&fps, RES, 21.0).unwrap();
        assert_eq!(groups.len(), 2);
    }

    #[test]
    fn chain_links_transitively() {
        let step = 15.0 / RES;
        let fps = vec![
            building("c", 100.0 + 2.0 * step, 100.0),
            building("a", 100.0, 100.0),
            building("b", 100.0 + step, 100.0),
        ];
        // Transitive closure over the "< 21 m" relation.
        let mut adj = [[false; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d = fps[i].polygon.centroid().distance(&fps[j].polygon.centroid()) * RES;
                adj[i][j] = d < 21.0;
            }
        }
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    adj[i][j] |= adj[i][k] && adj[k][j];
                }
            }
        }
        assert!(adj.iter().all(|row| row.iter().all(|&b| b)));
        let groups = group_buildings(&fps, RES, 21.0).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].member_ids, vec!["a", "b", "c"]);
        assert_eq!(groups[0].union_mask.count(), 3 * 36);
    }

    #[test]
    fn empty_input_gives_no_groups() {
        let groups = group_buildings::<f64>(&[], RES, 21.0).unwrap();
        assert!(groups.is_empty());
    }

    #[test]
    fn group_ids_follow_centroid_order() {
        let fps = vec![building("low", 50.0, 400.0), building("high", 300.0, 50.0)];
        let groups = group_buildings(&fps, RES, 21.0).unwrap();
        assert_eq!(groups[0].member_ids, vec!["high"]);
        assert_eq!(groups[0].members, vec![1]);
        assert_eq!(groups[1].member_ids, vec!["low"]);
    }

    #[test]
    fn small_graphs() {
        let one = group_buildings(&[building("a", 10.0, 10.0)], RES, 21.0).unwrap();
        let g = build_graph(one, 5);
        assert_eq!(g.neighbors, vec![Vec::<usize>::new()]);

        let three = vec![
            building("a", 10.0, 10.0),
            building("b", 300.0, 10.0),
            building("c", 10.0, 300.0),
        ];
        let g = build_graph(group_buildings(&three, RES, 21.0).unwrap(), 5);
        assert_eq!(g.neighbors, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    }
}
