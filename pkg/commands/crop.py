# ROI 裁剪：单个标签体（可选同时裁剪强度体）

import logging
from pathlib import Path

from commands.common import add_volume_arguments, load_intensity, load_labels, load_mask
from errors import EXIT_OK
from nifti_io import write_volume
from roi_crop import apply_crop, crop_pipeline

logger = logging.getLogger(__name__)

NAME = "crop"
HELP = "脑掩码引导的 ROI 裁剪，输出裁剪后的标签体与边界旁车文件"

SIDECAR_SUFFIX = ".boundary.txt"


def add_arguments(parser):
    parser.add_argument("labels_in", help="输入标签体（.nii / .nii.gz）")
    parser.add_argument("labels_out", help="输出标签体")
    parser.add_argument("--brain-mask", default=None, help="外部脑掩码；缺省时取标签体的脑类别")
    parser.add_argument("--allow-empty-brain", action="store_true", help="无脑组织时按全零边界裁剪而不报错")
    parser.add_argument(
        "--also-crop", nargs=2, metavar=("INTENSITY_IN", "INTENSITY_OUT"), default=None,
        help="同一边界裁剪强度体",
    )
    add_volume_arguments(parser)


def sidecar_path(labels_out):
    return Path(str(labels_out) + SIDECAR_SUFFIX)


def run(args):
    labels = load_labels(args.labels_in, args)
    mask = load_mask(args.brain_mask, args) if args.brain_mask else None
    cropped, boundary = crop_pipeline(labels, brain_mask=mask, allow_empty_brain=args.allow_empty_brain)
    write_volume(cropped, args.labels_out)
    sidecar_path(args.labels_out).write_text(boundary.to_text(), encoding="utf-8")
    if args.also_crop:
        intensity_in, intensity_out = args.also_crop
        write_volume(apply_crop(load_intensity(intensity_in, args), boundary), intensity_out)
        logger.info("强度体已按同一边界裁剪: %s", intensity_out)
    logger.info("裁剪完成: %s -> %s", args.labels_in, args.labels_out)
    return EXIT_OK
