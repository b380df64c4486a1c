import os
from os.path import abspath

import nedc_mavqa_agents as mva

from .extensions.base import create_app

# the variable the service's bearer token is read from
#
DEF_TOKEN_ENV = 'MAVQA_TOKEN'

class AgentService():
    def __init__(self, script, token_env=DEF_TOKEN_ENV):

        # build the scripted agents and the app that serves them
        #
        self.backend = mva.ScriptedBackend(script)
        self.app = create_app(abspath(__file__), self.backend,
                              token=os.environ.get(token_env) or None,
                              script=abspath(script))

    def run(self, host='127.0.0.1', port=5000):
        self.app.run(host=host, port=port, debug=False)
