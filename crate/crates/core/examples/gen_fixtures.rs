//! Regenerates the synthetic transfer fixtures under `fixtures/`.
//!
//! ```text
//! cargo run -p kginject --example gen_fixtures [SENTENCES] [SEED]
//! ```

use std::path::PathBuf;

use kginject::kg::{build_domain_kg, EmbeddingTable, FileGenerator, KgConfig, TripleStore};
use kginject::synth::transfer_scenario;

fn main() -> kginject::Result<()> {
    let mut args = std::env::args().skip(1);
    let sentences: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(250);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).map_err(|e| kginject::Error::Io { path: dir.clone(), source: e })?;
    let write = |name: &str, text: &str| {
        std::fs::write(dir.join(name), text).map_err(|e| kginject::Error::Io { path: dir.join(name), source: e })
    };

    let sc = transfer_scenario(sentences, seed)?;
    write("laptops.tsv", &sc.source.to_tsv())?;
    write("restaurants.tsv", &sc.target.to_tsv())?;
    write("triples.tsv", &sc.triples)?;
    write("embeddings.txt", &sc.embeddings)?;
    write("generator.tsv", &sc.generator)?;

    let store = TripleStore::parse(&sc.triples, "triples.tsv")?;
    let emb = EmbeddingTable::parse(&sc.embeddings, "embeddings.txt")?;
    let generator = FileGenerator::parse(&sc.generator, "generator.tsv")?;
    let (kg, log) = build_domain_kg(&sc.target, &store, &emb, Some(&generator), &KgConfig::default())?;
    write("restaurants_kg.json", &kg.to_json()?)?;
    println!("seeds: {:?}", log.seeds);
    println!("nodes raw/pruned/augmented: {}/{}/{}", log.raw_nodes, log.pruned_nodes, log.augmented_nodes);
    Ok(())
}
