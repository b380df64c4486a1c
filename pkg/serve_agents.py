import argparse
import os
import sys

# Add the backend directory to the Python path
sys.path.append(os.path.join(os.path.dirname(__file__), 'app', 'backend'))

import nedc_debug_tools as ndt
from app import DEF_TOKEN_ENV, AgentService

if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='serve scripted agents '
                                     'over HTTP')
    parser.add_argument('script', help='scenario script')
    parser.add_argument('--host', default='127.0.0.1')
    parser.add_argument('--port', type=int, default=5000)
    parser.add_argument('--token-env', default=DEF_TOKEN_ENV,
                        help='variable holding the bearer token')
    args = parser.parse_args()

    ndt.configure(vrbl='BRIEF')
    AgentService(args.script, args.token_env).run(args.host, args.port)
