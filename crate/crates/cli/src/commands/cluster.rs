use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sae_embed::clustering::{
    assign_cluster_task, cluster_embeddings, cluster_label_task, conductance_zscore, describe_cluster, jaccard_matrix,
    per_cluster_accuracy, targeted_cluster, DEFAULT_K_LATENTS,
};
use sae_embed::clustering::{DEFAULT_KNN, DEFAULT_N_RANDOM};
use sae_embed::embedding::build_index;
use sae_embed::formats::{load_corpus, load_dense_vectors};
use sae_embed::{BinaryEmbedding, ClusterDescription, ClusterResult};

use super::{binary, existing, load_catalog, load_docs, pooled, require};
use crate::config::Context;
use crate::error::{CliError, CliResult};
use crate::report::{unix_now, write_report, Meta, Report};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub k_clusters: Option<usize>,
    /// Catalog for targeted clustering and descriptions.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Keyphrase text, embedded through the gateway; repeatable.
    #[arg(long)]
    pub keyphrase: Vec<String>,
    /// Keyphrase vectors as JSONL {"id", "vec"}.
    #[arg(long)]
    pub keyphrase_vecs: Option<PathBuf>,
    /// Latents kept per keyphrase in targeted mode.
    #[arg(long)]
    pub k_latents: Option<usize>,
    /// Dense document vectors (JSONL {"id", "vec"}) for conductance z-scores.
    #[arg(long)]
    pub dense: Option<PathBuf>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub n_random: Option<usize>,
    /// Corpus texts (JSONL {"id", "text"}); enables cluster labels and judged accuracy.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterParams {
    pub k_clusters: usize,
    pub seed: u64,
    pub targeted: bool,
    pub k_latents: Option<usize>,
    pub knn_k: Option<usize>,
    pub n_random: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub params: ClusterParams,
    pub clustering: ClusterResult,
    pub descriptions: Vec<ClusterDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance_z: Option<Vec<f64>>,
}

fn keyphrase_vectors(ctx: &Context, args: &ClusterArgs) -> CliResult<Vec<Vec<f32>>> {
    let mut vecs = Vec::new();
    if let Some(p) = &args.keyphrase_vecs {
        vecs.extend(load_dense_vectors(existing(p)?)?.into_values());
    }
    if !args.keyphrase.is_empty() {
        let gw = ctx.build_gateway()?;
        for k in &args.keyphrase {
            vecs.push(gw.embed(k)?);
        }
    }
    Ok(vecs)
}

pub fn run(ctx: &Context, args: &ClusterArgs) -> CliResult<()> {
    let meta = Meta {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let k = args
        .k_clusters
        .ok_or_else(|| CliError::input("--k-clusters is required"))?;
    let seed = ctx.seed();
    let docs = load_docs(require(&args.activations, "activations")?)?;
    let embs = binary(&pooled(&docs)?);
    let catalog = args.catalog.as_deref().map(|c| load_catalog(c, ctx)).transpose()?;
    let keyphrases = keyphrase_vectors(ctx, args)?;
    let targeted = !keyphrases.is_empty();
    let k_latents = args.k_latents.unwrap_or(DEFAULT_K_LATENTS);

    // documents the clustering actually saw, for descriptions
    let (result, clustered) = if targeted {
        let catalog = catalog
            .as_ref()
            .ok_or_else(|| CliError::input("targeted clustering needs --catalog"))?;
        let result = targeted_cluster(&embs, catalog, &keyphrases, k_latents, k, seed)?;
        let keep = catalog.union_keyphrase_latents(&keyphrases, k_latents)?;
        let filtered: Vec<BinaryEmbedding> = embs
            .iter()
            .map(|e| BinaryEmbedding {
                doc_id: e.doc_id.clone(),
                active: e.active.iter().copied().filter(|l| keep.contains(l)).collect(),
            })
            .collect();
        (result, filtered)
    } else {
        (cluster_embeddings(&embs, k, seed)?, embs.clone())
    };
    let kept: Vec<BinaryEmbedding> = clustered.into_iter().filter(|e| !e.active.is_empty()).collect();

    let mut descriptions = Vec::new();
    if k > 1 {
        let idx = build_index(&embs)?;
        let s = jaccard_matrix(&kept)?;
        for c in 0..k {
            let mut d = describe_cluster(c, &result, &idx, &s)?;
            if let Some(cat) = &catalog {
                sae_embed::diff::attach_labels(&mut d.top_latents, cat);
            }
            descriptions.push(d);
        }
    }

    let mut accuracy = None;
    if let Some(cp) = &args.corpus {
        let corpus = load_corpus(existing(cp)?)?;
        let text = |id: &str| corpus.get(id).map(|d| d.text.clone());
        let gw = ctx.build_gateway()?;
        let empty = sae_embed::LatentCatalog::new();
        let cat = catalog.as_ref().unwrap_or(&empty);
        let tasks: Vec<_> = descriptions.iter().map(|d| cluster_label_task(d, cat, text)).collect();
        let mut labels = Vec::new();
        for (d, r) in descriptions
            .iter_mut()
            .zip(gw.submit_batch(&tasks, ctx.max_in_flight()))
        {
            let label = r?.text().unwrap_or_default().to_string();
            d.label = Some(label.clone());
            labels.push(label);
        }
        if !labels.is_empty() {
            let original: BTreeMap<String, usize> = result
                .assignment
                .iter()
                .filter(|(d, _)| corpus.contains_key(*d))
                .map(|(d, &c)| (d.clone(), c))
                .collect();
            let tasks: Vec<_> = original
                .keys()
                .map(|d| assign_cluster_task(&corpus[d].text, &labels))
                .collect();
            let mut judged = BTreeMap::new();
            for (d, r) in original.keys().zip(gw.submit_batch(&tasks, ctx.max_in_flight())) {
                let c = r?
                    .cluster_index()
                    .ok_or_else(|| CliError::Gateway("assignment result has no cluster index".into()))?;
                judged.insert(d.clone(), c);
            }
            if !original.is_empty() {
                accuracy = Some(per_cluster_accuracy(&original, &judged)?);
            }
        }
    }

    let mut conductance_z = None;
    let (knn_k, n_random) = (
        args.knn_k.unwrap_or(DEFAULT_KNN),
        args.n_random.unwrap_or(DEFAULT_N_RANDOM),
    );
    if let Some(dp) = &args.dense {
        let dense = load_dense_vectors(existing(dp)?)?;
        let ids: Vec<&String> = result.assignment.keys().collect();
        let vecs: Vec<Vec<f32>> = ids
            .iter()
            .map(|d| {
                dense
                    .get(*d)
                    .cloned()
                    .ok_or_else(|| CliError::input(format!("{}: no vector for {d:?}", dp.display())))
            })
            .collect::<CliResult<_>>()?;
        let mut zs = Vec::new();
        for c in 0..result.n_clusters {
            let members: Vec<usize> = ids
                .iter()
                .enumerate()
                .filter(|(_, d)| result.assignment[**d] == c)
                .map(|(i, _)| i)
                .collect();
            zs.push(conductance_zscore(&members, &vecs, n_random, knn_k, seed)?);
        }
        conductance_z = Some(zs);
    }

    println!(
        "clustered {} docs into {k} clusters, sizes {:?}",
        result.assignment.len(),
        result.sizes()
    );
    let result = ClusterOutput {
        params: ClusterParams {
            k_clusters: k,
            seed,
            targeted,
            k_latents: targeted.then_some(k_latents),
            knn_k: args.dense.is_some().then_some(knn_k),
            n_random: args.dense.is_some().then_some(n_random),
        },
        clustering: result,
        descriptions,
        accuracy,
        conductance_z,
    };
    let uses_gateway = args.corpus.is_some() || !args.keyphrase.is_empty();
    write_report(
        &ctx.out_dir(),
        &Report::new("cluster", ctx.resolved("cluster", args, uses_gateway), result),
        meta,
    )?;
    Ok(())
}
