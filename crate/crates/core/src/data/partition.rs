use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Result, SpaflError};

/// Upper bound on whole-partition redraws in [`dirichlet_partition`].
pub const MAX_PARTITION_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-client index lists into one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub clients: Vec<ClientSplit>,
}

impl Partition {
    /// Clients that ended up without a test sample.
    pub fn clients_without_test(&self) -> Vec<usize> {
        self.clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.test.is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Label-skewed split: for every class, client shares are drawn from
/// `Dirichlet(beta * 1_N)` and the class's shuffled indices are cut at the
/// cumulative shares. The whole draw is repeated until every client holds at
/// least `min_per_client` samples.
pub fn dirichlet_partition(
    labels: &[usize],
    n_classes: usize,
    n_clients: usize,
    beta: f64,
    seed: u64,
    min_per_client: usize,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(SpaflError::config("need at least one client"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SpaflError::config(format!("Dirichlet concentration must be > 0, got {beta}")));
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| SpaflError::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or_else(|| SpaflError::data(format!("label {y} outside [0, {n_classes})")))?
            .push(i);
    }

    for _ in 0..MAX_PARTITION_DRAWS {
        let mut clients = vec![Vec::new(); n_clients];
        for class_idx in &by_class {
            let mut idx = class_idx.clone();
            idx.shuffle(&mut rng);
            let shares = loop {
                let g: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    break g.into_iter().map(|v| v / total).collect::<Vec<_>>();
                }
            };
            let n = idx.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (k, share) in shares.iter().enumerate() {
                cum += share;
                let end = if k + 1 == n_clients {
                    n
                } else {
                    ((cum * n as f64) as usize).clamp(start, n)
                };
                clients[k].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| c.len() >= min_per_client) {
            return Ok(Partition {
                clients: clients
                    .into_iter()
                    .map(|mut train| {
                        train.sort_unstable();
                        ClientSplit { train, test: Vec::new() }
                    })
                    .collect(),
            });
        }
    }
    Err(SpaflError::config(format!(
        "could not give each of {n_clients} clients at least {min_per_client} samples in \
         {MAX_PARTITION_DRAWS} Dirichlet draws; use a larger dataset, fewer clients or a larger beta"
    )))
}

/// Splits each client's samples into local train and test sets.
///
/// Indices are ordered by label (shuffled within a label) and test samples
/// are taken at evenly spaced positions, which stratifies where possible.
/// A client with `n >= 2` samples gets `clamp(round(n * test_fraction), 1, n - 1)`
/// test samples; a single-sample client keeps it for training.
pub fn client_split(partition: &Partition, labels: &[usize], test_fraction: f64, seed: u64) -> Result<Partition> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SpaflError::config(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = partition
        .clients
        .iter()
        .map(|c| {
            let mut all: Vec<usize> = c.train.iter().chain(&c.test).copied().collect();
            all.shuffle(&mut rng);
            all.sort_by_key(|&i| labels[i]);
            let n = all.len();
            let n_test = if n >= 2 {
                ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
            } else {
                0
            };
            let mut split = ClientSplit::default();
            for (pos, &i) in all.iter().enumerate() {
                let is_test = (pos + 1) * n_test / n > pos * n_test / n;
                if is_test {
                    split.test.push(i);
                } else {
                    split.train.push(i);
                }
            }
            split.train.sort_unstable();
            split.test.sort_unstable();
            split
        })
        .collect();
    Ok(Partition { clients })
}

/// Shannon entropy (nats) of the label histogram of `indices`.
pub fn label_entropy(labels: &[usize], indices: &[usize], n_classes: usize) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; n_classes];
    for &i in indices {
        counts[labels[i]] += 1;
    }
    let n = indices.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = balanced(3, 5);
        let p = dirichlet_partition(&labels, 3, 1, 0.5, 1, 1).unwrap();
        assert_eq!(p.clients[0].train, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn impossible_minimum_is_config_error() {
        let labels = balanced(2, 3);
        assert!(matches!(
            dirichlet_partition(&labels, 2, 10, 0.1, 0, 2),
            Err(SpaflError::Config(_))
        ));
    }

    #[test]
    fn rejects_bad_parameters() {
        let labels = balanced(2, 3);
        assert!(dirichlet_partition(&labels, 2, 0, 0.1, 0, 0).is_err());
        assert!(dirichlet_partition(&labels, 2, 2, 0.0, 0, 0).is_err());
    }

    #[test]
    fn smaller_beta_is_more_heterogeneous() {
        let labels = balanced(10, 200);
        let mean_entropy = |beta: f64| {
            let mut total = 0.0;
            for seed in 0..20 {
                let p = dirichlet_partition(&labels, 10, 10, beta, seed, 2).unwrap();
                total += p.clients.iter().map(|c| label_entropy(&labels, &c.train, 10)).sum::<f64>() / 10.0;
            }
            total / 20.0
        };
        let (e100, e1, e01) = (mean_entropy(100.0), mean_entropy(1.0), mean_entropy(0.1));
        assert!(e100 >= e1 && e1 >= e01, "{e100} {e1} {e01}");
        assert!(e01 < e100);
    }

    #[test]
    fn split_arithmetic() {
        let labels = balanced(2, 5);
        let p = Partition {
            clients: vec![
                ClientSplit {
                    train: (0..10).collect(),
                    test: vec![],
                },
                ClientSplit {
                    train: vec![3],
                    test: vec![],
                },
            ],
        };
        let s = client_split(&p, &labels, 0.2, 0).unwrap();
        assert_eq!((s.clients[0].train.len(), s.clients[0].test.len()), (8, 2));
        // stratified: one test sample from each class
        let mut test_labels: Vec<usize> = s.clients[0].test.iter().map(|&i| labels[i]).collect();
        test_labels.sort();
        assert_eq!(test_labels, vec![0, 1]);
        assert_eq!((s.clients[1].train.len(), s.clients[1].test.len()), (1, 0));
        assert_eq!(s.clients_without_test(), vec![1]);
        assert!(client_split(&p, &labels, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_laws(seed in 0u64..1000, beta in 0.05f64..50.0, n_clients in 1usize..12, test_fraction in 0.05f64..0.95) {
            let labels = balanced(5, 30);
            let p = dirichlet_partition(&labels, 5, n_clients, beta, seed, 0).unwrap();
            let mut seen = vec![0u8; labels.len()];
            for c in &p.clients {
                for &i in &c.train {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));

            let s = client_split(&p, &labels, test_fraction, seed).unwrap();
            let mut seen = vec![0u8; labels.len()];
            for (orig, c) in p.clients.iter().zip(&s.clients) {
                prop_assert_eq!(orig.len(), c.len());
                for &i in c.train.iter().chain(&c.test) {
                    seen[i] += 1;
                }
                prop_assert!(c.train.iter().all(|i| !c.test.contains(i)));
                if c.len() >= 2 {
                    prop_assert!(!c.test.is_empty());
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
