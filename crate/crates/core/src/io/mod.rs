//! File formats: session and plan JSON, PNG canvases, and sequencer maps.

pub mod image;
pub mod json;
pub mod maps;

pub use self::image::{export_image, export_tile, import_image, linear_to_srgb, srgb_to_linear, PngDepth};
pub use json::*;
pub use maps::{
    decode_attention_png, decode_labels_png, decode_normals_png, encode_attention_png, encode_labels_png,
    encode_normals_png, load_maps,
};
