//! Grouped non-IID client construction.
//!
//! Clients are split into equal groups. Every group owns a window of
//! `classes_per_client` consecutive classes; adjacent windows share one
//! class (0-3, 3-6, 6-9 for ten classes and three groups). Within a client,
//! `majors_per_client` randomly chosen classes receive `major_count`
//! samples and the rest `minor_count`. Samples are drawn without
//! replacement across all clients.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub num_groups: usize,
    pub classes_per_client: usize,
    pub major_count: usize,
    pub minor_count: usize,
    pub majors_per_client: usize,
    /// Local test samples per client class.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            num_clients: 60,
            num_groups: 3,
            classes_per_client: 4,
            major_count: 20,
            minor_count: 5,
            majors_per_client: 2,
            test_per_class: 20,
            seed: 0,
        }
    }
}

impl PartitionSpec {
    pub fn client_train_size(&self) -> usize {
        self.majors_per_client * self.major_count + (self.classes_per_client - self.majors_per_client) * self.minor_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Ground-truth group. For evaluation only; federation never reads it.
    pub true_cluster: usize,
    /// Row indices into the source pools, for auditing.
    pub train_source: Vec<usize>,
    pub test_source: Vec<usize>,
}

/// Class windows, one per group. Windows overlap by one class when
/// `groups·(width-1) + 1 <= classes`; otherwise they wrap around modulo
/// `classes` with the same stride. Configurations whose windows would
/// coincide as class sets are rejected.
pub fn class_windows(classes: usize, groups: usize, width: usize) -> Result<Vec<Vec<usize>>> {
    if groups == 0 || width == 0 || width > classes {
        return Err(Error::invalid(format!(
            "cannot form {groups} windows of {width} classes out of {classes}"
        )));
    }
    if groups == 1 {
        return Ok(vec![(0..width).collect()]);
    }
    let stride = (width - 1).max(1);
    let windows: Vec<Vec<usize>> = (0..groups)
        .map(|g| (0..width).map(|i| (g * stride + i) % classes).collect())
        .collect();
    let mut sets: Vec<Vec<usize>> = windows
        .iter()
        .map(|w| {
            let mut s = w.clone();
            s.sort_unstable();
            s
        })
        .collect();
    sets.sort();
    sets.dedup();
    if sets.len() != groups {
        return Err(Error::invalid(format!(
            "{groups} groups with windows of {width} classes do not fit in {classes} classes"
        )));
    }
    Ok(windows)
}

fn per_class_indices(data: &LabeledDataset, seed: u64, pool: u64) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.class_count];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (k, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng_for(seed, &[stream::PARTITION, pool, k as u64]));
    }
    by_class
}

fn take(pool: &mut [Vec<usize>], cursor: &mut [usize], class: usize, n: usize) -> Result<Vec<usize>> {
    let available = pool[class].len() - cursor[class];
    if n > available {
        return Err(Error::Capacity {
            class,
            needed: n,
            available,
        });
    }
    let out = pool[class][cursor[class]..cursor[class] + n].to_vec();
    cursor[class] += n;
    Ok(out)
}

pub fn partition_clients(train: &LabeledDataset, test: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientDataset>> {
    if spec.num_groups == 0 || spec.num_clients == 0 || !spec.num_clients.is_multiple_of(spec.num_groups) {
        return Err(Error::invalid(format!(
            "{} clients cannot be split into {} equal groups",
            spec.num_clients, spec.num_groups
        )));
    }
    if spec.classes_per_client > train.class_count || spec.majors_per_client > spec.classes_per_client {
        return Err(Error::invalid("classes per client exceed the available classes"));
    }
    if spec.client_train_size() == 0 {
        return Err(Error::invalid("clients would receive no training samples"));
    }
    if train.dim() != test.dim() || train.class_count != test.class_count {
        return Err(Error::invalid("train and test pools disagree on shape"));
    }
    let windows = class_windows(train.class_count, spec.num_groups, spec.classes_per_client)?;
    let per_group = spec.num_clients / spec.num_groups;
    let mut train_pool = per_class_indices(train, spec.seed, 0);
    let mut test_pool = per_class_indices(test, spec.seed, 1);
    let mut train_cursor = vec![0; train.class_count];
    let mut test_cursor = vec![0; test.class_count];

    let mut clients = Vec::with_capacity(spec.num_clients);
    for client_id in 0..spec.num_clients {
        let group = client_id / per_group;
        let mut classes = windows[group].clone();
        classes.shuffle(&mut rng_for(spec.seed, &[stream::PARTITION, 2, client_id as u64]));
        let mut train_idx = Vec::with_capacity(spec.client_train_size());
        let mut test_idx = Vec::new();
        for (rank, &class) in classes.iter().enumerate() {
            let n = if rank < spec.majors_per_client { spec.major_count } else { spec.minor_count };
            if n == 0 {
                continue;
            }
            train_idx.extend(take(&mut train_pool, &mut train_cursor, class, n)?);
            test_idx.extend(take(&mut test_pool, &mut test_cursor, class, spec.test_per_class)?);
        }
        train_idx.sort_unstable_by_key(|&i| (train.labels[i], i));
        test_idx.sort_unstable_by_key(|&i| (test.labels[i], i));
        clients.push(ClientDataset {
            client_id,
            train: train.subset(&train_idx),
            test: test.subset(&test_idx),
            true_cluster: group,
            train_source: train_idx,
            test_source: test_idx,
        });
    }
    Ok(clients)
}

/// CSV audit table: one row per client with per-class train counts.
pub fn partition_manifest_csv(clients: &[ClientDataset]) -> String {
    let k = clients.first().map_or(0, |c| c.train.class_count);
    let mut out = String::from("client_id,true_cluster,train_size,test_size");
    for c in 0..k {
        out.push_str(&format!(",class_{c}"));
    }
    out.push('\n');
    for c in clients {
        out.push_str(&format!("{},{},{},{}", c.client_id, c.true_cluster, c.train.len(), c.test.len()));
        for n in c.train.class_counts() {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
    }
    out
}
