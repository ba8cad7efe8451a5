//! JRD-driven CTU QP allocation, colour conversion, the proxy codec and the
//! rate/accuracy sweep.

mod adapter;
mod color;
mod pipeline;
mod proxy;
mod qpmap;

pub use adapter::{CodecAdapter, CodedImage, ExternalCodec, ProxyCodec};
pub use color::{rgb_to_yuv420, yuv420_to_rgb, Yuv420};
pub use pipeline::{
    pipeline_images, run_rate_accuracy, run_uniform_anchor, settings_to_csv, settings_to_curve,
    ImageResult, PipelineImage, SettingResult, DEFAULT_BASE_QPS, DEFAULT_DELTA_QPS,
    SETTINGS_HEADER,
};
pub use proxy::{
    dct2, entropy_bits, idct2, proxy_encode, qstep, PlaneCoding, BLOCK, CTU_OVERHEAD_BITS,
};
pub use qpmap::{
    assign_qps, cell_rect, classify_ctus, CtuGrid, CtuKind, QpAssignment, QpMap, CTU_SIZE, MAX_QP,
};
