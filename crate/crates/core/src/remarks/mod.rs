//! Clinical summary templating, remark generation (LLM or offline stub) and
//! remark embedding.

mod embed;
mod llm;
mod summary;

pub use embed::{
    embed_remark, fnv1a, tokenize, ExternalEmbedder, FrozenProjection, HashingEmbedder,
    RawEmbedding, RemarkEmbedder, RemarkEmbedding, DEFAULT_HASH_SEED, DEFAULT_PROJECTION_SEED,
    EMBEDDING_DIM, MAX_TOKENS,
};
pub(crate) use embed::hex_string;
pub use llm::{
    compose_input, generate_remark, remark_generator, CompletionConfig, HttpCompletionClient,
    Remark, RemarkGenerator, RemarkOrigin, StubRemarker, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
    ENV_STUB, STUB_MODEL_NAME,
};
pub use summary::{
    summarize, ClinicalSummary, KnowledgeBank, PromptTemplate, DEFAULT_KNOWLEDGE_BANK,
    DEFAULT_PROMPT,
};
