# run.py - Command-line entry point for the MotionCode pipeline
import json
import logging
import os

import click
import numpy as np

import refdb
from config import Config, load_run_config, save_resolved_config
from errors import ConfigError, MotionCodeError
from evaluate import depth_rmse, export_velocity_profile, fit_plane_rmse, velocity_profile
from models import CapturedImage, ExposureSchedule, Rig
from optics import render_capture
from patterns import build_pattern_set, geometry_from_config, load_pattern_set, save_pattern_set
from pnm import read_pfm, write_pfm, write_pgm
from scenes import load_scene, scene_from_config
from search_coarse import estimate_initial, make_grid, search_mask
from search_fine import bp_refine, refine
from superres import load_sequence, save_sequence, super_resolve
from sync import decode_markers, drop_small_fractions
from trend import run_trend_experiment

logger = logging.getLogger(__name__)

STAGES = ('coarse', 'fine', 'bp')


def banner(title):
    click.echo("=" * 60)
    click.echo(title)
    click.echo("=" * 60)


def bullet(text):
    click.echo(f"   • {text}")


class MotionCodeGroup(click.Group):
    """Maps library errors to exit codes in one place"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except MotionCodeError as e:
            click.echo(f"❌ {type(e).__name__}: {e}", err=True)
            ctx.exit(e.exit_code)


def run_options(f):
    f = click.option('--workers', type=int, default=None, help='Worker threads (default from config)')(f)
    f = click.option('--set', 'overrides', multiple=True, metavar='SECTION.KEY=VALUE',
                     help='Override one config value; repeatable')(f)
    f = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     default=None, help='Run config JSON')(f)
    return f


def load_config(config_path, overrides, workers):
    cfg = load_run_config(config_path, overrides)
    if workers is not None:
        if workers < 1:
            raise ConfigError(f'--workers must be at least 1, got {workers}')
        cfg['runtime']['workers'] = workers
    return cfg


def read_capture(path, cfg):
    return CapturedImage(intensity=read_pfm(path).astype(np.float64),
                         t_exposure=float(cfg['scene']['t_exposure']))


def read_schedule(path, capture, cfg, n_pmax):
    """Schedule from a JSON file, else decoded from the capture's markers"""
    if path:
        with open(path, 'r', encoding='utf-8') as f:
            return ExposureSchedule.from_dict(json.load(f))
    geometry = geometry_from_config(cfg['patterns'])
    if geometry is None:
        raise ConfigError('No --schedule given and patterns.markers is off')
    search = cfg['search']
    sched = decode_markers(capture, geometry, n_pmax, threshold=search['marker_threshold'])
    return drop_small_fractions(sched, search['min_fraction'])


def stage_order(pipeline_order, stage):
    """Pipeline steps to run for a --stage value"""
    steps = [s.strip() for s in pipeline_order.split(',') if s.strip()]
    if stage == 'coarse':
        return ['coarse']
    if 'fine' not in steps:
        steps.append('fine')
    if stage == 'fine':
        return [s for s in steps if s != 'bp']
    if 'bp' not in steps:
        steps.append('bp')
    return steps


def run_stages(db, capture, sched, cfg, stage='bp', workers=None):
    """Run the pipeline up to stage; returns a dict of the latest maps"""
    search, fine, bp = cfg['search'], cfg['fine'], cfg['bp']
    window = search['window']
    tile_rows = cfg['runtime']['tile_rows']
    workers = workers or cfg['runtime']['workers']
    mask = search_mask((db.height, db.width), window, geometry_from_config(cfg['patterns']))
    result = {'velocities': None, 'schedule': sched}
    coarse_depth = None
    for step in stage_order(bp['pipeline_order'], stage):
        if step == 'coarse':
            grid = make_grid(db, sched, v_max=search['v_max'], v_step=search['v_step'])
            depth, velocity, cost = estimate_initial(db, capture, sched, grid, window=window,
                                                     score_min=search['score_min'], workers=workers,
                                                     mask=mask, tile_rows=tile_rows)
            result.update(depth=depth, velocity=velocity, cost=cost, coarse=cost, grid=grid)
            coarse_depth = depth
        elif step == 'bp':
            result['depth'] = bp_refine(result['cost'], bp['lambda'], bp['iterations'], bp['truncation'])
        elif step == 'fine':
            grid = result['grid']
            from_coarse = result['depth'] is coarse_depth
            depth, velocities, cost = refine(
                db, capture, sched, (result['depth'], result['velocity']), window=window,
                v_adjacency_max=fine['v_adjacency_steps'] * grid.v_step,
                local_radius=fine['local_radius'], v_step=grid.v_step, score_min=search['score_min'],
                coarse=result['coarse'], seed_with_coarse=from_coarse, workers=workers,
                tile_rows=tile_rows)
            result.update(depth=depth, velocities=velocities, cost=cost)
    return result


def _pfm(directory, name, image):
    path = os.path.join(directory, name)
    write_pfm(path, np.where(np.isfinite(image), image, np.nan))
    return path


@click.group(cls=MotionCodeGroup)
@click.option('--log-level', default=None, help='Logging level (default MOTIONCODE_LOG_LEVEL)')
def cli(log_level):
    """Temporally super-resolved structured light from single captures"""
    logging.basicConfig(level=(log_level or Config.LOG_LEVEL).upper(),
                        format='%(levelname)s %(name)s: %(message)s')


@cli.command('gen-patterns')
@run_options
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
def gen_patterns(config_path, overrides, workers, out_dir):
    """Generate an equalized dot pattern set with markers"""
    cfg = load_config(config_path, overrides, workers)
    pats = cfg['patterns']
    rig = Rig.from_dict(cfg['rig'])
    patterns = build_pattern_set(rig, pats['n_patterns'], pats['total_density'], pats['seed'],
                                 dot_radius=pats['dot_radius'], geometry=geometry_from_config(pats))
    save_pattern_set(patterns, out_dir)
    save_resolved_config(cfg, out_dir)
    banner("🎨 PATTERN SET")
    for p in patterns:
        bullet(f"pattern {p.pattern_id:2d}: {p.lit_fraction() * 100:.2f}% lit")
    click.echo(f"\n✅ {len(patterns)} patterns saved to {out_dir}")


@cli.command('simulate')
@run_options
@click.option('--patterns', 'pattern_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--scene', 'scene_path', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Scene JSON (default: the scene section of the config)')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
def simulate(config_path, overrides, workers, pattern_dir, scene_path, out_dir):
    """Render one capture of a moving scene"""
    cfg = load_config(config_path, overrides, workers)
    rig = Rig.from_dict(cfg['rig'])
    patterns = load_pattern_set(pattern_dir)
    if scene_path:
        scene, settings = load_scene(scene_path, rig)
    else:
        scene, settings = scene_from_config(cfg['scene'], rig, base_dir=os.getcwd())
    capture = render_capture(rig, patterns, scene, start_phase=settings['start_phase'],
                             first=settings['first'], substeps=settings['substeps'], seed=settings['seed'])
    os.makedirs(out_dir, exist_ok=True)
    _pfm(out_dir, 'capture.pfm', capture.intensity)
    write_pgm(os.path.join(out_dir, 'capture.pgm'), capture.intensity, maxval=65535)
    if np.ndim(scene.depth0):
        _pfm(out_dir, 'depth0.pfm', scene.depth0)
    with open(os.path.join(out_dir, 'schedule.json'), 'w', encoding='utf-8') as f:
        json.dump(capture.true_schedule.to_dict(), f, indent=2)
    with open(os.path.join(out_dir, 'scene.json'), 'w', encoding='utf-8') as f:
        json.dump(scene.to_dict(), f, indent=2)
    save_resolved_config(cfg, out_dir)
    banner("📷 SIMULATED CAPTURE")
    bullet(f"patterns: {capture.true_schedule.pattern_ids}")
    bullet(f"weights: {[round(w, 4) for w in capture.true_schedule.weights]}")
    bullet(f"intensity range: {capture.intensity.min():.4f} - {capture.intensity.max():.4f}")
    click.echo(f"\n✅ Capture saved to {out_dir}")


@cli.command('build-db')
@run_options
@click.option('--patterns', 'pattern_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--out', 'out_dir', default=None, type=click.Path(file_okay=False),
              help='Database directory (default: the cache directory)')
def build_db(config_path, overrides, workers, pattern_dir, out_dir):
    """Render the reference database for a pattern set"""
    cfg = load_config(config_path, overrides, workers)
    rig = Rig.from_dict(cfg['rig'])
    patterns = load_pattern_set(pattern_dir)
    out_dir = out_dir or refdb.cached_path(os.path.basename(os.path.normpath(pattern_dir)))
    db = refdb.build(rig, patterns, cfg['database']['step_mm'], workers=cfg['runtime']['workers'])
    refdb.save(db, out_dir)
    save_resolved_config(cfg, out_dir)
    banner("🗄️  REFERENCE DATABASE")
    bullet(f"patterns: {db.pattern_ids}")
    bullet(f"slices: {db.n_depths} ({db.d_min_mm:.1f} - {db.d_max_mm:.1f} mm, step {db.step_mm} mm)")
    click.echo(f"\n✅ Database saved to {out_dir}")


@cli.command('decode-markers')
@run_options
@click.option('--capture', 'capture_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', default=None, type=click.Path(dir_okay=False))
def decode_markers_cmd(config_path, overrides, workers, capture_path, out_path):
    """Read the exposure schedule from a capture's marker strip"""
    cfg = load_config(config_path, overrides, workers)
    capture = read_capture(capture_path, cfg)
    sched = read_schedule(None, capture, cfg, cfg['patterns']['n_patterns'])
    text = json.dumps(sched.to_dict(), indent=2)
    if out_path:
        with open(out_path, 'w', encoding='utf-8') as f:
            f.write(text)
        save_resolved_config(cfg, os.path.dirname(os.path.abspath(out_path)))
    click.echo(text)


def _reconstruct_inputs(cfg, db_dir, capture_path, schedule_path):
    db = refdb.load(db_dir)
    capture = read_capture(capture_path, cfg)
    sched = read_schedule(schedule_path, capture, cfg, db.n_pmax)
    return db, capture, sched


@cli.command('reconstruct')
@run_options
@click.option('--db', 'db_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--capture', 'capture_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--schedule', 'schedule_path', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Schedule JSON (default: decode the markers)')
@click.option('--stage', type=click.Choice(STAGES), default='bp', show_default=True)
@click.option('--save-cost', is_flag=True, help='Also write the depth cost volume')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
def reconstruct(config_path, overrides, workers, db_dir, capture_path, schedule_path, stage, save_cost,
                out_dir):
    """Depth and velocity maps from one capture"""
    cfg = load_config(config_path, overrides, workers)
    db, capture, sched = _reconstruct_inputs(cfg, db_dir, capture_path, schedule_path)
    result = run_stages(db, capture, sched, cfg, stage)
    os.makedirs(out_dir, exist_ok=True)
    _pfm(out_dir, 'depth.pfm', result['depth'])
    _pfm(out_dir, 'score.pfm', result['cost'].best_score)
    _pfm(out_dir, 'velocity.pfm', result['velocity'])
    for n, v in enumerate(result['velocities'] or [], start=1):
        _pfm(out_dir, f'velocity_{n:02d}.pfm', v)
    with open(os.path.join(out_dir, 'schedule.json'), 'w', encoding='utf-8') as f:
        json.dump(sched.to_dict(), f, indent=2)
    if save_cost:
        cost = result['cost']
        cost.depth_scores.astype('<f8').tofile(os.path.join(out_dir, 'cost_volume.f64'))
        with open(os.path.join(out_dir, 'cost_volume.json'), 'w', encoding='utf-8') as f:
            json.dump(dict(cost.header(), layout='depth,row,col'), f, indent=2)
    save_resolved_config(cfg, out_dir)
    valid = np.isfinite(result['depth'])
    banner(f"🧭 RECONSTRUCTION ({stage.upper()})")
    bullet(f"schedule: patterns {sched.pattern_ids}")
    bullet(f"valid pixels: {valid.sum()} / {valid.size} ({100.0 * valid.mean():.1f}%)")
    if valid.any():
        bullet(f"depth range: {np.nanmin(result['depth']):.2f} - {np.nanmax(result['depth']):.2f} mm")
    click.echo(f"\n✅ Maps saved to {out_dir}")


@cli.command('superres')
@run_options
@click.option('--db', 'db_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--capture', 'capture_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--schedule', 'schedule_path', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--ply', is_flag=True, help='Also export each frame as a PLY point cloud')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
def superres_cmd(config_path, overrides, workers, db_dir, capture_path, schedule_path, ply, out_dir):
    """N_p depth frames from one capture"""
    cfg = load_config(config_path, overrides, workers)
    db, capture, sched = _reconstruct_inputs(cfg, db_dir, capture_path, schedule_path)
    result = run_stages(db, capture, sched, cfg, 'bp')
    fine, search = cfg['fine'], cfg['search']
    v_step = result['grid'].v_step
    mask = search_mask((db.height, db.width), search['window'], geometry_from_config(cfg['patterns']))
    sequence = super_resolve(result['depth'], result['velocities'], sched, db=db, capture=capture,
                             reverse_research=cfg['superres']['reverse_research'],
                             v_max=search['v_max'], mask=mask,
                             window=search['window'], v_adjacency_max=fine['v_adjacency_steps'] * v_step,
                             local_radius=fine['local_radius'], score_min=search['score_min'],
                             workers=cfg['runtime']['workers'], tile_rows=cfg['runtime']['tile_rows'])
    save_sequence(sequence, out_dir, rig=db.rig or Rig.from_dict(cfg['rig']), point_clouds=ply)
    save_resolved_config(cfg, out_dir)
    banner("🎞️  SUPER-RESOLVED SEQUENCE")
    for n, t in enumerate(sequence.timestamps, start=1):
        bullet(f"frame {n:2d} at t = {t * 1000:.2f} ms")
    click.echo(f"\n✅ {sequence.n_frames} frames saved to {out_dir}")


def _parse_region(text):
    try:
        values = tuple(int(v) for v in text.split(','))
    except ValueError:
        raise ConfigError(f'Region must be row0,row1,col0,col1: {text}') from None
    if len(values) != 4:
        raise ConfigError(f'Region must be row0,row1,col0,col1: {text}')
    return values


@cli.command('eval')
@run_options
@click.option('--depth', 'depth_path', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--truth', 'truth_path', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--truth-depth', type=float, default=None, help='Constant ground-truth depth (mm)')
@click.option('--frames', 'frames_dir', default=None, type=click.Path(exists=True, file_okay=False))
@click.option('--region', default=None, help='row0,row1,col0,col1 for the velocity profile')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
def eval_cmd(config_path, overrides, workers, depth_path, truth_path, truth_depth, frames_dir, region,
             out_dir):
    """Plane-fit RMSE, depth RMSE and velocity profiles"""
    cfg = load_config(config_path, overrides, workers)
    if depth_path is None and frames_dir is None:
        raise ConfigError('Give --depth and/or --frames')
    os.makedirs(out_dir, exist_ok=True)
    metrics = {}
    banner("📊 EVALUATION")
    if depth_path:
        depth = read_pfm(depth_path).astype(np.float64)
        rig = Rig.from_dict(dict(cfg['rig'], cam_width=depth.shape[1], cam_height=depth.shape[0]))
        valid = np.isfinite(depth)
        metrics['plane_rmse_mm'] = fit_plane_rmse(depth, mask=valid, rig=rig)
        bullet(f"plane-fit RMSE: {metrics['plane_rmse_mm']:.4f} mm")
        truth = read_pfm(truth_path).astype(np.float64) if truth_path else truth_depth
        if truth is not None:
            metrics['depth_rmse_mm'] = depth_rmse(depth, truth, valid)
            bullet(f"depth RMSE: {metrics['depth_rmse_mm']:.4f} mm")
        metrics['valid_fraction'] = float(valid.mean())
    if frames_dir:
        sequence = load_sequence(frames_dir)
        h, w = sequence.valid.shape
        bounds = _parse_region(region) if region else (0, h, 0, w)
        export_velocity_profile(sequence, bounds, os.path.join(out_dir, 'velocity_profile.csv'))
        metrics['velocity_profile'] = [v for _, _, _, v, _ in velocity_profile(sequence, bounds)]
        bullet(f"velocity profile: {len(metrics['velocity_profile'])} intervals")
    with open(os.path.join(out_dir, 'metrics.json'), 'w', encoding='utf-8') as f:
        json.dump(metrics, f, indent=2)
    save_resolved_config(cfg, out_dir)
    click.echo(f"\n✅ Metrics saved to {out_dir}")


@cli.command('trend')
@run_options
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
def trend_cmd(config_path, overrides, workers, out_path):
    """Accuracy sweep over pattern count or velocity"""
    cfg = load_config(config_path, overrides, workers)
    text = run_trend_experiment(cfg, workers=cfg['runtime']['workers'], path=out_path)
    save_resolved_config(cfg, os.path.dirname(os.path.abspath(out_path)))
    banner(f"📈 TREND: {cfg['trend']['axis'].upper()}")
    click.echo(text)
    click.echo(f"✅ Table saved to {out_path}")


if __name__ == '__main__':
    cli()
