use std::collections::{BTreeSet, HashMap};

use log::warn;
use serde_json::json;

use super::{Dataset, DatasetError, ProvenanceEntry};

/// Input roles in argument order: demonstrations of task 1 on robot S,
/// task 2 on robot T, and the two cross-painted counterparts.
pub const CROSS_PRODUCT_ROLES: [&str; 4] = ["d1_S", "d2_T", "d2_T->S", "d1_S->T"];

fn single_robot(ds: &Dataset, role: &str) -> Result<Option<String>, DatasetError> {
    let robots: BTreeSet<&str> = ds.trajectories.iter().map(|t| t.robot.as_str()).collect();
    match robots.len() {
        0 => Ok(None),
        1 => Ok(robots.into_iter().next().map(str::to_owned)),
        _ => Err(DatasetError::Invalid(format!(
            "{role} ({}) mixes robots {robots:?}",
            ds.name
        ))),
    }
}

/// Unions the four datasets into one that covers both robots on both tasks.
///
/// `d2_T->S` must show robot S (the robot of `d1_S`) and `d1_S->T` must
/// show robot T. Trajectory ids that occur in more than one input are
/// prefixed with their dataset name. Each output trajectory gets a
/// `compose:<name>` provenance entry naming its source.
pub fn compose_cross_product(
    name: &str,
    d1_s: &Dataset,
    d2_t: &Dataset,
    d2_t_to_s: &Dataset,
    d1_s_to_t: &Dataset,
) -> Result<Dataset, DatasetError> {
    let inputs = [d1_s, d2_t, d2_t_to_s, d1_s_to_t];
    let robots = inputs
        .iter()
        .zip(CROSS_PRODUCT_ROLES)
        .map(|(ds, role)| single_robot(ds, role))
        .collect::<Result<Vec<_>, _>>()?;
    // Role pairs that must show the same robot: (d1_S, d2_T->S), (d2_T, d1_S->T).
    for (a, b) in [(0, 2), (1, 3)] {
        if let (Some(ra), Some(rb)) = (&robots[a], &robots[b]) {
            if ra != rb {
                return Err(DatasetError::Invalid(format!(
                    "{} shows {ra} but {} shows {rb}",
                    CROSS_PRODUCT_ROLES[a], CROSS_PRODUCT_ROLES[b]
                )));
            }
        }
    }
    for (ds, role) in inputs.iter().zip(CROSS_PRODUCT_ROLES) {
        if let Some(t) = ds.trajectories.iter().find(|t| t.task.is_empty()) {
            return Err(DatasetError::Invalid(format!("{role}: trajectory '{}' has no task label", t.id)));
        }
    }

    let mut dims = None;
    for (ds, role) in inputs.iter().zip(CROSS_PRODUCT_ROLES) {
        for t in &ds.trajectories {
            for f in &t.frames {
                let d = f.dimensions();
                match dims {
                    None => dims = Some((d, role, t.id.clone())),
                    Some((expected, first_role, ref first_id)) if expected != d => {
                        return Err(DatasetError::Invalid(format!(
                            "frame size {d:?} in {role}/{} differs from {expected:?} in {first_role}/{first_id}",
                            t.id
                        )));
                    }
                    _ => {}
                }
            }
        }
    }

    let mut occurrences: HashMap<&str, usize> = HashMap::new();
    for ds in inputs {
        let unique: BTreeSet<&str> = ds.trajectories.iter().map(|t| t.id.as_str()).collect();
        for id in unique {
            *occurrences.entry(id).or_default() += 1;
        }
    }

    let mut out = Dataset::new(name);
    out.metadata = d1_s.metadata.clone();
    let mut used = BTreeSet::new();
    for (ds, role) in inputs.iter().zip(CROSS_PRODUCT_ROLES) {
        for t in &ds.trajectories {
            let mut t = t.clone();
            let original = t.id.clone();
            if occurrences[original.as_str()] > 1 {
                t.id = format!("{}/{}", ds.name, original);
            }
            let base = t.id.clone();
            let mut k = 1;
            while used.contains(&t.id) {
                t.id = format!("{base}#{k}");
                k += 1;
            }
            used.insert(t.id.clone());
            t.provenance.push(ProvenanceEntry::new(
                format!("compose:{name}"),
                json!({ "role": role, "source_dataset": ds.name, "source_id": original }),
                None,
            ));
            out.trajectories.push(t);
        }
    }

    let cells: BTreeSet<(String, String)> = out
        .trajectories
        .iter()
        .map(|t| (t.robot.clone(), t.task.clone()))
        .collect();
    for (ds, role) in inputs.iter().zip(CROSS_PRODUCT_ROLES) {
        if ds.trajectories.is_empty() {
            warn!("{role} ({}) is empty; its (robot, task) cell has no trajectories", ds.name);
        }
    }
    if cells.len() < 4 {
        warn!("cross product covers {} of 4 (robot, task) cells", cells.len());
    }
    Ok(out)
}
