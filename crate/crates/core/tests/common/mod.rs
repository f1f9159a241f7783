#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use molrag_core::annostore::AnnotationStore;
use molrag_core::backends::{ChatBackend, MockBackend, MockScript};
use molrag_core::embed::EmbeddingProvider;
use molrag_core::kgstore::{ingest_triplets, KnowledgeGraph};
use molrag_core::pipeline::{CaptionTool, Deps, FrozenClock, PipelineConfig, StaticTool};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub struct World {
    pub kg: KnowledgeGraph,
    pub store: AnnotationStore,
    pub embeddings: EmbeddingProvider,
    pub tool: StaticTool,
}

pub fn world() -> World {
    let kg = ingest_triplets(BufReader::new(File::open(fixture("mini_kg.tsv")).unwrap()))
        .unwrap()
        .0;
    let store = AnnotationStore::load(&fixture("mini_annotations.tsv")).unwrap();
    let embeddings = EmbeddingProvider::fingerprint(&kg);
    let tool = StaticTool::load(BufReader::new(File::open(fixture("tool_captions.tsv")).unwrap())).unwrap();
    World {
        kg,
        store,
        embeddings,
        tool,
    }
}

pub fn mock(name: &str) -> MockBackend {
    MockBackend::new(MockScript::load(&fixture(&format!("mock/{name}"))).unwrap())
}

pub fn deps<'a>(w: &'a World, backend: &'a dyn ChatBackend, tool: Option<&'a dyn CaptionTool>) -> Deps<'a> {
    Deps {
        kg: &w.kg,
        annotations: Some(&w.store),
        embeddings: &w.embeddings,
        backend,
        captioner: tool,
        config: PipelineConfig::default(),
        clock: &FrozenClock,
    }
}
