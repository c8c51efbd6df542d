from .networks import PhantomInsight


def get_architecture(config):
    config.validate()
    return PhantomInsight(config)
