//! Emotion teacher: lexicon targets, the post/token graph, GCN and the MLP head.

pub mod gcn;
pub mod graph;
pub mod lexicon;
pub mod refine;
pub mod teacher;

pub use gcn::{extract_emotion_embeddings, train_emotion_gcn, GcnConfig, GcnEmbeddings, GcnModel};
pub use graph::{build_graph, init_node_features, EdgeKind, TextGraph};
pub use lexicon::{assign_emotions, label_count_distribution, Emotion, EmotionLabelSet, EmotionLexicon, NUM_EMOTIONS};
pub use refine::{refine_with_encoder, RefineConfig, RefinedEncoder};
pub use teacher::{train_emotion_teacher, EmotionFeatures, EmotionInput, EmotionTeacher, EmotionTeacherConfig};
