"""Writes the KITTI-format mini fixture and prints the expected lidar-frame box
centers, computed with homogeneous 4x4 matrices in numpy."""

import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent
SCENE = "0019"

R_RECT = np.array(
    [9.999239e-01, 9.837760e-03, -7.445048e-03,
     -9.869795e-03, 9.999421e-01, -4.278459e-03,
     7.402527e-03, 4.351614e-03, 9.999631e-01]).reshape(3, 3)
TR_VELO_CAM = np.array(
    [7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
     1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
     9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01]).reshape(3, 4)

# frame track type trunc occ alpha x1 y1 x2 y2 h w l x y z ry
LABELS = """\
0 0 Car 0 0 -1.57 296.7 161.7 455.2 292.3 1.65 1.67 3.64 -5.10 1.82 13.41 -1.58
0 1 Pedestrian 0 0 2.10 712.4 143.0 810.7 307.9 1.89 0.48 1.20 1.84 1.47 8.41 0.01
0 -1 DontCare -1 -1 -10 322.3 166.9 341.2 193.2 -1 -1 -1 -1000 -1000 -1000 -10
1 0 Car 0 0 -1.55 302.1 160.3 460.9 290.0 1.65 1.67 3.64 -4.92 1.81 12.87 -1.56
1 1 Pedestrian 0 1 2.12 715.0 142.1 812.3 309.4 1.89 0.48 1.20 1.79 1.47 8.12 0.04
"""


def homogeneous(m):
    out = np.eye(4)
    out[: m.shape[0], : m.shape[1]] = m
    return out


def main():
    (ROOT / "calib").mkdir(exist_ok=True)
    (ROOT / "label_02").mkdir(exist_ok=True)
    (ROOT / "velodyne" / SCENE).mkdir(parents=True, exist_ok=True)

    with open(ROOT / "calib" / f"{SCENE}.txt", "w") as f:
        for i in range(4):
            f.write(f"P{i}: " + " ".join(["0"] * 12) + "\n")
        f.write("R_rect " + " ".join(f"{v:e}" for v in R_RECT.ravel()) + "\n")
        f.write("Tr_velo_cam " + " ".join(f"{v:e}" for v in TR_VELO_CAM.ravel()) + "\n")
        f.write("Tr_imu_velo " + " ".join(["0"] * 12) + "\n")
    (ROOT / "label_02" / f"{SCENE}.txt").write_text(LABELS)

    cam_to_velo = np.linalg.inv(homogeneous(R_RECT) @ homogeneous(TR_VELO_CAM))
    rng = np.random.default_rng(19)
    for row in LABELS.splitlines():
        tok = row.split()
        if tok[2] == "DontCare":
            continue
        frame, track = int(tok[0]), int(tok[1])
        h, w, l = map(float, tok[10:13])
        loc = np.array(list(map(float, tok[13:16])))
        center = cam_to_velo @ np.append(loc - [0.0, h / 2, 0.0], 1.0)
        print(f"frame {frame} track {track} {tok[2]:<10} center "
              + " ".join(f"{v:.6f}" for v in center[:3]))

    # A handful of returns around each car center plus background.
    for frame in (0, 1):
        pts = rng.normal(0.0, 5.0, size=(40, 4)).astype(np.float32)
        pts[:, 3] = rng.uniform(0, 1, size=40)
        pts.astype("<f4").tofile(ROOT / "velodyne" / SCENE / f"{frame:06d}.bin")


if __name__ == "__main__":
    main()
