REGISTRIES = {}


def setup_registry(registry_name):
    """
    Returns a `register(name)` class/function decorator and the dict it
    fills. Registries are global, so a name can only be set up once.
    """
    if registry_name in REGISTRIES:
        raise ValueError(f'Cannot register duplicate registry {registry_name}')
    REGISTRY = {}
    REGISTRIES[registry_name] = REGISTRY

    def register(name):

        def register_obj(obj):
            if name in REGISTRY:
                raise ValueError(f'Cannot register duplicate key {name} in {registry_name}')
            for v in REGISTRY.values():
                if v.__name__ == obj.__name__:
                    raise ValueError(f'Cannot register duplicate name {obj.__name__}')
            REGISTRY[name] = obj
            return obj

        return register_obj

    return register, REGISTRY


def lookup(registry_name, key):
    registry = REGISTRIES[registry_name]
    if key not in registry:
        raise KeyError(f"'{key}' is not registered in {registry_name}, "
                       f"choose from {sorted(registry)}")
    return registry[key]
