//! Prints per-class transform rankings on the synthetic dataset: which
//! transforms each class tolerates and which shift its meaning.
//!
//! Run: cargo run --release -p kex-core --example print_rankings

use kex_core::dataset::{self, Split};
use kex_core::knowledge_encoder::{create_backend, Embedder};
use kex_core::transform_bank::{Bank, IDENTITY_ID};
use kex_core::transport_ranker::{
    rank_transforms, select_pairs, TransportConfig, TransportMethod,
};

fn main() {
    let ds = dataset::load("synthetic:classes=car+fruit+house,train=300,test=10,seed=7,side=32")
        .unwrap();
    let backend = create_backend("grad-hist-64").unwrap();
    let bank = Bank::at(1).unwrap();

    for class in ["car", "fruit", "house"] {
        let images = ds.class_batch(Split::Train, class).unwrap();
        let embedder = Embedder::new(backend.as_ref());
        let sets = embedder
            .embed_all_transforms(&images, &bank, 11, ds.id(), class)
            .unwrap();
        let identity = &sets[IDENTITY_ID];

        for method in [TransportMethod::Sliced, TransportMethod::Exact] {
            let cfg = TransportConfig {
                method,
                seed: 5,
                ..Default::default()
            };
            let ranking = rank_transforms(identity, &sets, &bank, &cfg).unwrap();
            let policy = select_pairs(&ranking, 2).unwrap();
            println!("== {class} ({method:?})");
            for e in &ranking.entries {
                println!("   {:>18}  {:.6}", e.transform, e.distance);
            }
            println!("   positives: {:?}  negatives: {:?}", policy.positives, policy.negatives);
        }
    }
}
