"""Command-line entry points for the offline exporter."""

from __future__ import annotations

import click

from .backbone import FeatureBackbone
from .extract import export_correspondences, extract_features


@click.group()
def main():
    """Offline feature and correspondence exporter."""


def _backbone_options(fn):
    for deco in (
        click.option("--weights", default="imagenet", show_default=True,
                     help="imagenet | random:<seed> | path to a .pth state dict"),
        click.option("--input-size", default=224, show_default=True),
        click.option("--resize-size", default=256, show_default=True),
    ):
        fn = deco(fn)
    return fn


@main.command("extract-features")
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", default=None, help="restrict to one manifest split")
@click.option("--batch-size", default=8, show_default=True)
@_backbone_options
def extract_features_cmd(image_dir, manifest_path, out_path, split, batch_size,
                         weights, input_size, resize_size):
    """Write a feature bank for every image in the manifest."""
    backbone = FeatureBackbone(weights=weights, input_size=input_size,
                               resize_size=resize_size)
    report = extract_features(image_dir, manifest_path, backbone, out_path,
                              batch_size=batch_size, split=split)
    click.echo(f"wrote {report.written} records to {out_path} "
               f"({len(report.skipped)} skipped)")
    for image_id, reason in report.skipped:
        click.echo(f"  skipped {image_id}: {reason}", err=True)


@main.command("export-correspondences")
@click.option("--requests", "request_path", required=True, type=click.Path(exists=True))
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              help="resolves image ids to source paths")
@click.option("--out", "out_path", required=True, type=click.Path())
@_backbone_options
def export_correspondences_cmd(request_path, image_dir, manifest_path, out_path,
                               weights, input_size, resize_size):
    """Write correspondence maps for every requested (query, gallery) pair."""
    backbone = FeatureBackbone(weights=weights, input_size=input_size,
                               resize_size=resize_size)
    report = export_correspondences(request_path, image_dir, backbone, out_path,
                                    manifest_path=manifest_path)
    click.echo(f"wrote {report.written} correspondence maps to {out_path} "
               f"({len(report.skipped)} images unreadable)")


if __name__ == "__main__":
    main()
