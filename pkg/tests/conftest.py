import hypothesis

hypothesis.settings.register_profile(
    "lensinspect",
    deadline=None,
    max_examples=30,
    derandomize=True,
)
hypothesis.settings.load_profile("lensinspect")
