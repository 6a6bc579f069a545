pub mod api;
pub mod collaboration_graph;
pub mod entity_resolution;
pub mod fixture;
pub mod ingest;
pub mod money;
pub mod pipeline;
pub mod priority_classifier;
pub mod query_engine;
pub mod sdg_tagger;
pub mod semantic_map;
pub mod text_embedding;
pub mod topic_model;
