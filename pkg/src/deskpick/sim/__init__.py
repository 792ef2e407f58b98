from .shapes import (Disc, Box, Ngon, Footprint, bounding_radius,
                     contains_points, slab_extent, separation_vector,
                     footprints_overlap, world_vertices, local_vertices,
                     to_gripper_frame, footprint_to_dict, footprint_from_dict)
from .world import (RigidObject, GripperState, Scene, WorldAction, StepOutcome,
                    spawn_scene, step_gripper, detect_grasp, grasp_candidates,
                    max_object_height, finger_poses, jaw_axes,
                    scene_to_dict, scene_from_dict, scene_to_json, scene_from_json,
                    WIDTH_MAX, GRASP_MIN_EXTENT, FINGER_HALF_LEN,
                    FINGER_THICKNESS, FINGER_HEIGHT)
from .render import (CameraConfig, DepthImage, render_depth, filtered_depth,
                     normalize_depth, LABEL_PLANE, LABEL_FINGER, LABEL_OBJECT_BASE)
