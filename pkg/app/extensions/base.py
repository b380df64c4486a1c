import os

from flask import Flask, request
from loguru import logger
from werkzeug.middleware.proxy_fix import ProxyFix

# the key the agent backend is kept under in app.extensions
#
EXT_BACKEND = "mavqa_backend"

class Config():
    def __init__(self, root, script=None, token=None) -> None:
        self.APP = os.path.abspath(os.path.dirname(root))
        self.BACKEND = os.path.join(self.APP, 'backend')

        # the scenario script the agents answer from
        #
        self.SCRIPT = script

        # the bearer token requests must carry (None = no check)
        #
        self.TOKEN = token

        # images arrive base64-encoded in JSON bodies
        #
        self.MAX_CONTENT_LENGTH = 64 * 1024 * 1024

class App(Flask):

    def __init__(self):

        super().__init__(__name__)

        # add the proxy fix to the app
        #
        self.wsgi_app = ProxyFix(self.wsgi_app, x_proto=1, x_host=1)

        @self.before_request
        def log_request():
            logger.debug("request path: {}", request.path)

    def set_root(self, root, script=None, token=None):

        # create the configuration
        #
        config = Config(root, script, token)

        # add the configuration to the app
        #
        self.config.from_object(config)

    def set_backend(self, backend):
        self.extensions[EXT_BACKEND] = backend

def create_app(root, backend, token=None, script=None):
    """
    function: create_app

    arguments:
     root: a file inside the app package
     backend: the agent Backend that answers requests
     token: the bearer token requests must carry (None = no check)
     script: the scenario script the backend was built from

    return:
     an App with the agent routes registered
    """
    from .blueprint import agents

    app = App()
    app.set_root(root, script, token)
    app.set_backend(backend)
    app.register_blueprint(agents)
    return app
