from roijscc.model.blocks import ROIBlock, StageContext, stage_context, zero_output_projections
from roijscc.model.codec import ModelConfig, ROIJSCC, feature_shape, parameter_count
from roijscc.model.conv import ConvJSCC


def build_model(cfg: ModelConfig):
    return ROIJSCC(cfg) if cfg.arch == "roi" else ConvJSCC(cfg)


__all__ = [
    "ConvJSCC",
    "ModelConfig",
    "ROIBlock",
    "ROIJSCC",
    "StageContext",
    "build_model",
    "feature_shape",
    "parameter_count",
    "stage_context",
    "zero_output_projections",
]
