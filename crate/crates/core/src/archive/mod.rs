//! CVT-MAP-Elites solution database.
//!
//! Each cell of a fixed Voronoi tessellation keeps at most one elite. Raw descriptors
//! are normalized online (Welford z-score through a sigmoid), so the geometry drifts as
//! new behaviour appears; elites already stored are never re-binned.

mod cvt;
mod welford;

pub use cvt::{kmeans, Centroids, KMeansResult, PlacementMode, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use welford::{sigmoid, WelfordState};

use serde::{Deserialize, Serialize};

use crate::candidate::Candidate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome {
    Inserted {
        cell: usize,
        previous_score: Option<f64>,
    },
    RejectedWorse {
        cell: usize,
        incumbent_score: f64,
    },
    RejectedFailed,
}

impl InsertOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, InsertOutcome::Inserted { .. })
    }

    pub fn cell(&self) -> Option<usize> {
        match self {
            InsertOutcome::Inserted { cell, .. } | InsertOutcome::RejectedWorse { cell, .. } => {
                Some(*cell)
            }
            InsertOutcome::RejectedFailed => None,
        }
    }
}

/// One k-means group of occupied cells with its best elite.
#[derive(Debug, Clone)]
pub struct OccupiedCluster {
    pub cells: Vec<usize>,
    pub representative: Candidate,
}

#[derive(Debug, Clone)]
pub struct Archive {
    centroids: Centroids,
    cells: Vec<Option<Candidate>>,
    stats: WelfordState,
}

impl Archive {
    /// Empty archive over `centroids`, with statistics already primed.
    pub fn new(centroids: Centroids, stats: WelfordState) -> Result<Self> {
        if centroids.dim() != stats.dim() {
            return Err(Error::config(format!(
                "centroids live in {} dimensions but statistics track {}",
                centroids.dim(),
                stats.dim()
            )));
        }
        let cells = vec![None; centroids.len()];
        Ok(Archive {
            centroids,
            cells,
            stats,
        })
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    pub fn stats(&self) -> &WelfordState {
        &self.stats
    }

    pub fn cell(&self, index: usize) -> Option<&Candidate> {
        self.cells.get(index).and_then(Option::as_ref)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Occupied cells as `(cell index, elite)`, in cell order.
    pub fn elites(&self) -> impl Iterator<Item = (usize, &Candidate)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }

    /// Highest-scoring elite; ties resolved towards the lower candidate id.
    pub fn best(&self) -> Option<&Candidate> {
        self.elites()
            .map(|(_, c)| c)
            .max_by(|a, b| a.score.total_cmp(&b.score).then(b.id.cmp(&a.id)))
    }

    /// Cell the descriptor would land in under the current statistics, without
    /// updating them.
    pub fn locate(&self, raw: &[f64]) -> Result<usize> {
        Ok(self.centroids.nearest(&self.stats.normalize(raw)?))
    }

    /// Update statistics with the candidate's raw descriptor, then store it in its
    /// nearest cell if the cell is empty or the score strictly beats the incumbent.
    pub fn try_insert(&mut self, candidate: Candidate) -> Result<InsertOutcome> {
        self.insert_inner(candidate, true)
    }

    /// Like [`Archive::try_insert`] for candidates whose descriptors are already part of
    /// the statistics the archive was created with.
    pub fn try_insert_calibrated(&mut self, candidate: Candidate) -> Result<InsertOutcome> {
        self.insert_inner(candidate, false)
    }

    fn insert_inner(&mut self, mut candidate: Candidate, update_stats: bool) -> Result<InsertOutcome> {
        if candidate.is_failed() {
            return Ok(InsertOutcome::RejectedFailed);
        }
        if candidate.descriptor.dim() != self.stats.dim() {
            return Err(Error::config(format!(
                "candidate {} has a {}-dimensional descriptor, archive expects {}",
                candidate.id,
                candidate.descriptor.dim(),
                self.stats.dim()
            )));
        }
        if update_stats {
            self.stats.update(&candidate.descriptor.raw)?;
        }
        let normalized = self.stats.normalize(&candidate.descriptor.raw)?;
        let cell = self.centroids.nearest(&normalized);
        candidate.descriptor.normalized = normalized;
        match &self.cells[cell] {
            Some(incumbent) if candidate.score <= incumbent.score => Ok(InsertOutcome::RejectedWorse {
                cell,
                incumbent_score: incumbent.score,
            }),
            previous => {
                let previous_score = previous.as_ref().map(|c| c.score);
                self.cells[cell] = Some(candidate);
                Ok(InsertOutcome::Inserted {
                    cell,
                    previous_score,
                })
            }
        }
    }

    /// Group occupied cells with k-means over their elites' normalized descriptors and
    /// return the best elite of each group.
    pub fn cluster_occupied(&self, k: usize, seed: u64) -> Result<Vec<OccupiedCluster>> {
        let occupied: Vec<(usize, &Candidate)> = self.elites().collect();
        if occupied.is_empty() {
            return Err(Error::precondition("cannot cluster an empty archive"));
        }
        if k < 1 {
            return Err(Error::config("cluster count must be at least 1"));
        }
        let points: Vec<Vec<f64>> = occupied
            .iter()
            .map(|(_, c)| c.descriptor.normalized.clone())
            .collect();
        let km = kmeans(&points, k.min(occupied.len()), seed)?;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); km.centroids.len()];
        for (slot, &a) in km.assignments.iter().enumerate() {
            groups[a].push(slot);
        }
        Ok(groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|g| {
                let rep = g
                    .iter()
                    .map(|&s| occupied[s].1)
                    .max_by(|a, b| a.score.total_cmp(&b.score).then(b.id.cmp(&a.id)))
                    .expect("non-empty group");
                OccupiedCluster {
                    cells: g.iter().map(|&s| occupied[s].0).collect(),
                    representative: rep.clone(),
                }
            })
            .collect())
    }

    pub fn snapshot(&self) -> ArchiveSnapshot {
        ArchiveSnapshot {
            placement: self.centroids.mode(),
            n_cells: self.cells.len(),
            centroids: self.centroids.points().to_vec(),
            stats: self.stats.clone(),
            cells: self
                .elites()
                .map(|(i, c)| CellRecord {
                    centroid_index: i,
                    centroid: self.centroids.points()[i].clone(),
                    elite: c.clone(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snapshot: ArchiveSnapshot) -> Result<Self> {
        let centroids = Centroids::from_points(snapshot.centroids, snapshot.placement)?;
        let mut archive = Archive::new(centroids, snapshot.stats)?;
        for rec in snapshot.cells {
            let slot = archive
                .cells
                .get_mut(rec.centroid_index)
                .ok_or_else(|| Error::config("snapshot cell index out of range"))?;
            *slot = Some(rec.elite);
        }
        Ok(archive)
    }
}

/// Serialized archive: occupied cells plus the normalizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSnapshot {
    pub placement: PlacementMode,
    pub n_cells: usize,
    pub centroids: Vec<Vec<f64>>,
    pub stats: WelfordState,
    pub cells: Vec<CellRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub centroid_index: usize,
    pub centroid: Vec<f64>,
    pub elite: Candidate,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::{CandidateId, Descriptor, Origin};

    fn cand(id: u64, score: f64, raw: Vec<f64>) -> Candidate {
        let mut c = Candidate::new(CandidateId(id), format!("artifact {id}"), Origin::Mutation);
        c.score = score;
        c.descriptor = Descriptor::from_raw(raw);
        c
    }

    fn two_cell_archive() -> Archive {
        let centroids = Centroids::from_points(
            vec![vec![0.25], vec![0.75]],
            PlacementMode::Calibrated,
        )
        .unwrap();
        Archive::new(centroids, WelfordState::new(1)).unwrap()
    }

    #[test]
    fn empty_cell_accepts_and_ties_keep_incumbent() {
        let mut a = two_cell_archive();
        let out = a.try_insert(cand(1, 10.0, vec![3.0])).unwrap();
        assert!(matches!(out, InsertOutcome::Inserted { previous_score: None, .. }));
        let cell = out.cell().unwrap();
        // Constant raw value keeps sigma at zero, so everything lands in the same cell.
        let tie = a.try_insert(cand(2, 10.0, vec![3.0])).unwrap();
        assert_eq!(
            tie,
            InsertOutcome::RejectedWorse {
                cell,
                incumbent_score: 10.0
            }
        );
        let better = a.try_insert(cand(3, 10.5, vec![3.0])).unwrap();
        assert_eq!(
            better,
            InsertOutcome::Inserted {
                cell,
                previous_score: Some(10.0)
            }
        );
        assert_eq!(a.cell(cell).unwrap().id, CandidateId(3));
        assert_eq!(a.stats().count(), 3);
    }

    #[test]
    fn failed_candidates_leave_everything_untouched() {
        let mut a = two_cell_archive();
        let mut c = cand(1, 5.0, vec![1.0]);
        c.error = Some("crash".into());
        assert_eq!(a.try_insert(c).unwrap(), InsertOutcome::RejectedFailed);
        assert_eq!(a.stats().count(), 0);
        assert_eq!(a.occupied(), 0);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut a = two_cell_archive();
        assert!(matches!(
            a.try_insert(cand(1, 1.0, vec![1.0, 2.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn clustering_one_cell_returns_it() {
        let mut a = two_cell_archive();
        a.try_insert(cand(4, 2.0, vec![0.0])).unwrap();
        let groups = a.cluster_occupied(3, 0).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].representative.id, CandidateId(4));
    }

    #[test]
    fn clustering_empty_archive_fails() {
        let a = two_cell_archive();
        assert!(matches!(a.cluster_occupied(3, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut a = two_cell_archive();
        a.try_insert(cand(1, 1.0, vec![0.0])).unwrap();
        a.try_insert(cand(2, 2.0, vec![10.0])).unwrap();
        let snap = a.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back = Archive::from_snapshot(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.snapshot(), snap);
    }
}
