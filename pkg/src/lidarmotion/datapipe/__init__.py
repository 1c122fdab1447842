"""Dataset ingestion, synthetic scenes, input assembly and sampling."""

from .assemble import (
    FLOW_SOURCES,
    MODES,
    DatasetIndex,
    PriorStack,
    assemble_input,
    batch_sampler,
    check_mode,
    flip_arrays,
    flip_augmenter,
    hflip,
    lidar_flow_target,
    load_stack,
    mode_for_channels,
    net_flow_predictor,
    save_stack,
)
from .formats import (
    KittiCalib,
    read_grid,
    read_kitti_calib,
    read_kitti_tracking_labels,
    read_motion_map,
    read_pose_file,
    read_range_image,
    read_velodyne_bin,
    write_grid,
    write_motion_map,
    write_pose_file,
    write_range_image,
    write_velodyne_bin,
)
from .scene import PrerequisiteError, Scene, ScenePair, read_scene, write_scene
from .synth import (
    SceneDistribution,
    SceneSpec,
    VehicleSpec,
    random_scene_spec,
    raycast,
    synth_flow,
    synth_scene,
    synthetic_camera,
)
