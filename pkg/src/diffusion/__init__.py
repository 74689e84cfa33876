from .data import make_dataset, neglect_score, region_mask, template_correlation
from .denoiser import DenoiserShape, ToyDenoiser, gradient_check, load_checkpoint, save_checkpoint
from .sampler import ContextShift, context_shift, inpaint, reverse_step, sample
from .schedule import forward_noising
from .train import Adam, batch_loss, make_batch, shuffle_labels, train

__all__ = [
    "make_dataset", "neglect_score", "region_mask", "template_correlation",
    "DenoiserShape", "ToyDenoiser", "gradient_check", "load_checkpoint", "save_checkpoint",
    "ContextShift", "context_shift", "inpaint", "reverse_step", "sample", "forward_noising",
    "Adam", "batch_loss", "make_batch", "shuffle_labels", "train",
]
