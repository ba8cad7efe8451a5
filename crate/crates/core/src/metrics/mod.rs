//! Evaluation metrics: JRD prediction error, image quality, detection
//! accuracy and Bjontegaard deltas.

mod bjontegaard;
mod detection;
mod jrd_error;
mod quality;

pub use bjontegaard::{
    bd_metric, bd_rate, bd_report, BdReport, CurvePoint, RateAccuracyCurve, BD_METHOD, CURVE_HEADER,
};
pub use detection::{
    ap_per_category, average_precision, detections_to_json, load_detections, map_at_iou,
    parse_detections, Detection, RECALL_POINTS,
};
pub use jrd_error::{mae_ea, mae_range, JrdSample, RANGE_HI, RANGE_LO};
pub use quality::{
    delta_metrics, mse, psnr, psnr_from_mse, psnr_rgb, r_squared, ssim, ssim_rgb, CodedPair,
    DeltaMetrics,
};
