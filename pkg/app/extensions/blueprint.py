import hmac

from flask import Blueprint, abort, current_app, jsonify, request
from loguru import logger

import nedc_mavqa_agents as mva
import nedc_mavqa_types as mvt
from nedc_mavqa_errors import (AgentUnavailableError, InvalidInputError,
                               VqaError)

from .base import EXT_BACKEND

# Create a Blueprint
#
agents = Blueprint('agents', __name__)

# map a route name back to its agent kind
#
KINDS = {route: kind for kind, route in mva.ROUTES.items()}

def check_token():

    # no token configured means the service is open
    #
    token = current_app.config.get('TOKEN')
    if not token:
        return

    header = request.headers.get('Authorization', '')
    scheme, _, value = header.partition(' ')
    if scheme != mva.AUTH_SCHEME or not hmac.compare_digest(value, token):
        abort(401)
#
# end of function

@agents.route('/health', methods=['GET'])
def health():
    backend = current_app.extensions[EXT_BACKEND]
    return jsonify({'status': 'ok',
                    'backend': type(backend).__name__,
                    'routes': sorted(KINDS)})

@agents.route(mva.API_PREFIX + '<route>', methods=['POST'])
def call_agent(route):

    # find the agent kind and check the caller
    #
    kind = KINDS.get(route)
    if kind is None:
        abort(404)
    check_token()

    # decode the request body
    #
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        return jsonify({'error': 'body is not a JSON object'}), 400
    try:
        agent_request = mva.AgentRequest.from_body(kind, body)
    except InvalidInputError as e:
        return jsonify({'error': str(e)}), 400

    # answer it
    #
    backend = current_app.extensions[EXT_BACKEND]
    try:
        reply = backend.call(agent_request)
    except AgentUnavailableError as e:
        logger.warning("{} unavailable: {}", route, e)
        return jsonify({'error': str(e)}), 503
    except VqaError as e:
        logger.error("{} failed: {}", route, e)
        return jsonify({'error': str(e)}), 500

    logger.debug("{} {} answered", kind.value,
                 mvt.Stage(agent_request.stage).value)
    return jsonify(reply.response)
