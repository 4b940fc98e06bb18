import genesis as gs

gs.init(backend=gs.cpu)
scene = gs.Scene(
    sim_options=gs.options.SimOptions(dt=4e-3, substeps=10),
    sph_options=gs.options.SPHOptions(lower_bound=(-0.5, -0.5, 0.0), upper_bound=(0.5, 0.5, 1.0), particle_size=0.01),
    show_viewer=False,
)
scene.add_entity(gs.morphs.Plane())
scene.add_entity(
    gs.morphs.Box(pos=(0.0, 0.0, 0.65), size=(0.4, 0.4, 0.4)),
    material=gs.materials.SPH.Liquid(rho=1000.0, viscosity=0.02),
)
cam = scene.add_camera(res=(1280, 640), pos=(2.5, 0.0, 1.5), lookat=(0, 0, 0.3), fov=40, GUI=False)
scene.build()

cam.start_recording()
steps_per_frame = round(1 / (60 * 4e-3))
for i in range(300 * steps_per_frame):
    scene.step()
    if i % steps_per_frame == 0:
        cam.render()
cam.stop_recording(save_to_filename="genesis_video.mp4", fps=60)
