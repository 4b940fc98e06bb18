import genesis as gs

gs.init(backend=gs.cpu)
scene = gs.Scene(
    sim_options=gs.options.SimOptions(dt=1 / 60, substeps=10),
    show_viewer=False,
)
scene.add_entity(gs.morphs.Plane())
ball = scene.add_entity(
    gs.morphs.Sphere(radius=0.1, pos=(0.0, 0.0, 1.0)),
    material=gs.materials.Rigid(rho=500.0, coup_restitution=0.8),
)
cam = scene.add_camera(res=(1280, 640), pos=(3.0, 0.0, 1.5), lookat=(0, 0, 0.5), fov=40, GUI=False)
scene.build()

cam.start_recording()
for _ in range(300):
    scene.step()
    cam.render()
cam.stop_recording(save_to_filename="genesis_video.mp4", fps=60)
