//! Epoch preparation: sphere sampling, augmentation, collation and the
//! per-level neighbour tables, spread over a worker pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tp3_core::collate::{
    collate_dense, collate_partial_dense, collate_sparse, ConvType, DenseBatch, PartialDenseBatch, SparseBatch,
};
use tp3_core::geometry::Point;
use tp3_core::protocol::SphereSampler;
use tp3_core::seed::derive_seed;
use tp3_core::spatial::{farthest_point_sampling, radius_search, NeighborTable};
use tp3_core::Cloud;

use crate::config::RunConfig;
use crate::error::Result;
use crate::queue::{run_pool, PoolStats};

#[derive(Debug, Clone, PartialEq)]
pub enum CollatedBatch {
    Dense(DenseBatch<f64>),
    PartialDense(PartialDenseBatch<f64>),
    Sparse(SparseBatch<f64>),
}

/// One encoder level of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTables {
    /// Indices of the level's support points into the previous level's
    /// points (the instance itself for level 0).
    pub sampled: Vec<usize>,
    /// One table per configured radius; queries are the sampled points.
    pub neighbors: Vec<NeighborTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub index: usize,
    /// Host-cloud index of each sphere center.
    pub centers: Vec<usize>,
    pub batch: CollatedBatch,
    /// `levels[instance][level]`.
    pub levels: Vec<Vec<LevelTables>>,
}

impl PreparedBatch {
    pub fn num_points(&self) -> usize {
        match &self.batch {
            CollatedBatch::Dense(b) => b.labels.len(),
            CollatedBatch::PartialDense(b) => b.len(),
            CollatedBatch::Sparse(b) => b.len(),
        }
    }

    /// Folds every field into a running SHA-256 so whole epochs can be
    /// compared bit for bit.
    pub fn digest_into(&self, h: &mut Sha256) {
        let f = |h: &mut Sha256, v: f64| h.update(v.to_bits().to_le_bytes());
        let u = |h: &mut Sha256, v: usize| h.update((v as u64).to_le_bytes());
        u(h, self.index);
        self.centers.iter().for_each(|&c| u(h, c));
        match &self.batch {
            CollatedBatch::Dense(b) => {
                h.update(b"dense");
                b.data.iter().for_each(|&v| f(h, v));
                b.labels.iter().for_each(|&l| h.update(l.to_le_bytes()));
            }
            CollatedBatch::PartialDense(b) => {
                h.update(b"partial");
                b.positions.iter().flatten().for_each(|&v| f(h, v));
                if let Some(x) = &b.features {
                    x.iter().for_each(|&v| f(h, v));
                }
                if let Some(l) = &b.labels {
                    l.iter().for_each(|&l| h.update(l.to_le_bytes()));
                }
                b.batch.iter().for_each(|&v| u(h, v));
            }
            CollatedBatch::Sparse(b) => {
                h.update(b"sparse");
                b.coords.iter().flatten().for_each(|&c| h.update(c.to_le_bytes()));
                b.batch.iter().for_each(|&v| u(h, v));
                b.features.iter().for_each(|&v| f(h, v));
                if let Some(l) = &b.labels {
                    l.iter().for_each(|&l| h.update(l.to_le_bytes()));
                }
            }
        }
        for inst in &self.levels {
            for level in inst {
                level.sampled.iter().for_each(|&v| u(h, v));
                for t in &level.neighbors {
                    u(h, t.width());
                    t.indices().iter().for_each(|&v| u(h, v));
                }
            }
        }
    }
}

/// `ceil(spheres_per_epoch / batch_size)`.
pub fn batches_per_epoch(config: &RunConfig) -> usize {
    config.protocol.spheres_per_epoch.div_ceil(config.protocol.batch_size)
}

/// Sampled support points and neighbour tables for every level.
pub fn level_tables(positions: &[Point<f64>], config: &RunConfig) -> Result<Vec<LevelTables>> {
    let l = &config.protocol.levels;
    let mut support: Vec<Point<f64>> = positions.to_vec();
    let mut out = Vec::with_capacity(l.npoint.len());
    for (level, &npoint) in l.npoint.iter().enumerate() {
        if support.is_empty() {
            out.push(LevelTables {
                sampled: Vec::new(),
                neighbors: l.radii[level]
                    .iter()
                    .zip(&l.nsamples[level])
                    .map(|(&r, &k)| radius_search(&support, &[], r, k))
                    .collect::<Result<_, _>>()?,
            });
            continue;
        }
        let sampled = farthest_point_sampling(&support, npoint.min(support.len()), 0)?;
        let queries: Vec<Point<f64>> = sampled.iter().map(|&i| support[i]).collect();
        let neighbors = l.radii[level]
            .iter()
            .zip(&l.nsamples[level])
            .map(|(&r, &k)| radius_search(&support, &queries, r, k))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(LevelTables { sampled, neighbors });
        support = queries;
    }
    Ok(out)
}

/// Builds batch `index` of `epoch`. The result depends only on the config,
/// the cloud, the epoch and the index.
pub fn prepare_batch(
    config: &RunConfig,
    sampler: &SphereSampler<'_, f64>,
    cloud: &Cloud,
    epoch: u64,
    index: usize,
) -> Result<PreparedBatch> {
    let p = &config.protocol;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch, index as u64]));
    let size = p.batch_size.min(p.spheres_per_epoch - index * p.batch_size);
    let mut centers = Vec::with_capacity(size);
    let mut instances = Vec::with_capacity(size);
    for _ in 0..size {
        let c = sampler.draw_center(&mut rng);
        let region = sampler.region(c);
        centers.push(c);
        let inst = cloud.select(&region.members);
        instances.push(config.data.train_transforms.apply(&inst, &mut rng)?);
    }
    let (batch, positions): (CollatedBatch, Vec<Vec<Point<f64>>>) = match config.conv_type() {
        ConvType::Dense => {
            let b = collate_dense(&instances, p.dense_points, &mut rng)?;
            let pos = (0..b.data.shape()[0])
                .map(|i| {
                    (0..b.data.shape()[1])
                        .map(|j| [b.data[[i, j, 0]], b.data[[i, j, 1]], b.data[[i, j, 2]]])
                        .collect()
                })
                .collect();
            (CollatedBatch::Dense(b), pos)
        }
        ConvType::PartialDense => {
            let pos = instances.iter().map(|c| c.positions().to_vec()).collect();
            (CollatedBatch::PartialDense(collate_partial_dense(&instances)?), pos)
        }
        ConvType::Sparse => {
            let pos = instances.iter().map(|c| c.positions().to_vec()).collect();
            (CollatedBatch::Sparse(collate_sparse(&instances, p.voxel_size)?), pos)
        }
    };
    let levels = positions
        .iter()
        .map(|pos| level_tables(pos, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedBatch {
        index,
        centers,
        batch,
        levels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub batches: usize,
    pub points: usize,
    pub peak_buffered: usize,
    /// Hex SHA-256 over every prepared batch in order.
    pub digest: String,
}

/// Prepares one epoch on `config.workers` threads and hands batches to
/// `consume` in index order through a queue of `config.queue_capacity()`.
pub fn prepare_batches<F>(config: &RunConfig, cloud: &Cloud, epoch: u64, mut consume: F) -> Result<EpochSummary>
where
    F: FnMut(PreparedBatch) -> Result<()>,
{
    let sampler = SphereSampler::new(cloud, config.protocol.sphere_radius)?;
    let total = batches_per_epoch(config);
    let mut hasher = Sha256::new();
    let mut points = 0;
    let PoolStats { items, peak_buffered } = run_pool(
        config.workers,
        config.queue_capacity(),
        total,
        |i| prepare_batch(config, &sampler, cloud, epoch, i),
        |_, b: PreparedBatch| {
            b.digest_into(&mut hasher);
            points += b.num_points();
            consume(b)
        },
    )?;
    Ok(EpochSummary {
        batches: items,
        points,
        peak_buffered,
        digest: hex(&hasher.finalize()),
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
