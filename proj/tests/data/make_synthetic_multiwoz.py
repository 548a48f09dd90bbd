#!/usr/bin/env python3
"""Writes a synthetic corpus in the MultiWOZ 2.x layout (data.json plus
dialogue_acts.json) for tests and desk-scale training runs.

Each dialogue has a speaking style. User turns are phrased in that style and
the system picks a template of the same style most of the time, so context
carries some signal about the paraphrase that follows.
"""

import argparse
import json
import os
import random

STYLES = ["formal", "casual", "terse"]

VALUES = {
    "name": ["la mimosa", "the golden curry", "pizza hut city centre", "curry garden", "yippee noodle bar",
             "the copper kettle", "nandos", "meghna", "shiraz", "bedouin", "cote", "loch fyne"],
    "food": ["italian", "indian", "chinese", "british", "european", "mediterranean", "thai", "korean"],
    "area": ["north", "south", "east", "west", "centre"],
    "price": ["cheap", "moderate", "expensive"],
    "phone": ["01223 356354", "01223 412299", "01223 362456", "01223 323361", "01223 351880"],
    "addr": ["12 bridge street", "4 kings parade", "35 newnham road", "17 hills road", "2 sidney street"],
    "post": ["cb2 1uj", "cb4 3ax", "cb1 2lj", "cb3 9ey"],
    "ref": ["a1b2c3d4", "xk09ql7z", "00000012", "bbq77ppe", "r7t8y9u0", "mm12nn34"],
    "people": ["2", "3", "4", "5", "6"],
    "day": ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
    "hotel": ["acorn guest house", "the lensfield hotel", "alpha-milton guest house", "city centre north b and b",
              "hamilton lodge", "the gonville hotel"],
    "stars": ["2", "3", "4", "5"],
    "choice": ["3", "5", "7", "10", "12"],
    "trainid": ["tr1234", "tr7075", "tr2266", "tr5867", "tr0031"],
    "leave": ["05:15", "09:40", "11:21", "13:00", "17:15", "21:59"],
    "arrive": ["06:08", "10:32", "12:15", "14:07", "18:44"],
    "dest": ["cambridge", "london kings cross", "ely", "norwich", "stansted airport", "peterborough"],
    "ticket": ["10.10 pounds", "23.60 pounds", "37.80 pounds", "4.40 pounds"],
    "attr": ["kettle's yard", "the fitzwilliam museum", "great saint mary's church", "cherry hinton water play",
             "the cambridge punter", "all saints church"],
    "atype": ["museum", "college", "park", "boat", "church", "theatre"],
    "fee": ["free", "5 pounds", "2.50 pounds"],
    "car": ["black toyota", "white audi", "red skoda", "blue ford", "grey tesla"],
}

# (act label, [(slot name in acts, value key)], {style: [templates]})
ACTS = [
    ("Restaurant-Inform", [("Name", "name"), ("Food", "food")], {
        "formal": ["{name} serves {food} cuisine .", "I would suggest {name} , which serves {food} food .",
                   "{name} is a {food} restaurant ."],
        "casual": ["how about {name} ? they do {food} food .", "{name} is a great {food} place !",
                   "you might like {name} , it 's {food} ."],
        "terse": ["{name} , {food} .", "try {name} . {food} food ."],
    }),
    ("Restaurant-Inform", [("Name", "name"), ("Area", "area")], {
        "formal": ["{name} is located in the {area} of town .", "There is {name} in the {area} area ."],
        "casual": ["{name} is over in the {area} !", "check out {name} in the {area} ."],
        "terse": ["{name} , {area} .", "{name} in the {area} ."],
    }),
    ("Restaurant-Inform", [("Name", "name"), ("Food", "food"), ("Area", "area")], {
        "formal": ["{name} serves {food} food in the {area} of town .",
                   "I recommend {name} , a {food} restaurant in the {area} ."],
        "casual": ["what about {name} ? it 's {food} and it 's in the {area} .",
                   "{name} does {food} food over in the {area} !"],
        "terse": ["{name} : {food} , {area} .", "{name} , {food} food , {area} ."],
    }),
    ("Restaurant-Inform", [("Phone", "phone")], {
        "formal": ["The phone number is {phone} .", "Their telephone number is {phone} ."],
        "casual": ["you can call them on {phone} .", "their number is {phone} !"],
        "terse": ["phone : {phone} .", "{phone} ."],
    }),
    ("Restaurant-Inform", [("Addr", "addr"), ("Post", "post")], {
        "formal": ["The address is {addr} , postcode {post} .", "They are located at {addr} , {post} ."],
        "casual": ["they 're at {addr} , {post} .", "you 'll find them at {addr} , {post} !"],
        "terse": ["{addr} , {post} .", "address : {addr} , {post} ."],
    }),
    ("Restaurant-Request", [("Food", "?")], {
        "formal": ["What type of food would you like ?", "Do you have a cuisine preference ?"],
        "casual": ["what kind of food are you in the mood for ?", "any food you fancy ?"],
        "terse": ["food type ?", "which cuisine ?"],
    }),
    ("Restaurant-Request", [("Area", "?")], {
        "formal": ["Which area of town would you prefer ?", "Is there a particular area you would like ?"],
        "casual": ["any part of town you like ?", "where in town do you wanna eat ?"],
        "terse": ["area ?", "which area ?"],
    }),
    ("Restaurant-Recommend", [("Name", "name"), ("Price", "price")], {
        "formal": ["I would recommend {name} , which is {price} .", "May I suggest {name} ? It is {price} ."],
        "casual": ["{name} is pretty {price} , you 'd like it !", "go for {name} , it 's {price} ."],
        "terse": ["{name} , {price} .", "recommend {name} . {price} ."],
    }),
    ("Booking-Book", [("Ref", "ref")], {
        "formal": ["Your booking was successful . The reference number is {ref} .",
                   "I have booked it for you . Your reference is {ref} ."],
        "casual": ["all booked ! your reference is {ref} .", "done ! reference number {ref} ."],
        "terse": ["booked . ref : {ref} .", "ref {ref} ."],
    }),
    ("Booking-Book", [("People", "people"), ("Ref", "ref")], {
        "formal": ["I have booked a table for {people} . The reference number is {ref} .",
                   "Your table for {people} is booked , reference {ref} ."],
        "casual": ["got you a table for {people} ! ref is {ref} .", "booked for {people} people , ref {ref} ."],
        "terse": ["{people} people , ref {ref} .", "table for {people} . ref {ref} ."],
    }),
    ("Booking-Request", [("Day", "?")], {
        "formal": ["What day would you like the booking for ?", "For which day shall I make the reservation ?"],
        "casual": ["what day works for you ?", "which day do you want ?"],
        "terse": ["day ?", "which day ?"],
    }),
    ("Booking-NoBook", [("Day", "day")], {
        "formal": ["I am sorry , there is no availability on {day} .",
                   "Unfortunately the booking for {day} was unsuccessful ."],
        "casual": ["sorry , {day} is fully booked .", "no luck for {day} , sorry !"],
        "terse": ["{day} unavailable .", "nothing on {day} ."],
    }),
    ("Hotel-Inform", [("Name", "hotel"), ("Stars", "stars")], {
        "formal": ["{hotel} is a {stars} star hotel .", "I can suggest {hotel} , rated {stars} stars ."],
        "casual": ["{hotel} has {stars} stars , pretty nice !", "how about {hotel} ? {stars} stars ."],
        "terse": ["{hotel} , {stars} stars .", "{hotel} . {stars} star ."],
    }),
    ("Hotel-Inform", [("Choice", "choice"), ("Area", "area")], {
        "formal": ["There are {choice} hotels in the {area} .", "I have {choice} options in the {area} area ."],
        "casual": ["i found {choice} places in the {area} !", "there 's {choice} hotels up in the {area} ."],
        "terse": ["{choice} hotels , {area} .", "{choice} in the {area} ."],
    }),
    ("Hotel-Request", [("Stars", "?")], {
        "formal": ["How many stars would you like the hotel to have ?", "Do you have a star rating in mind ?"],
        "casual": ["how fancy do you want it , star wise ?", "any star rating you like ?"],
        "terse": ["stars ?", "star rating ?"],
    }),
    ("Train-Inform", [("Id", "trainid"), ("Leave", "leave")], {
        "formal": ["{trainid} departs at {leave} .", "Train {trainid} leaves at {leave} ."],
        "casual": ["{trainid} heads off at {leave} !", "you could take {trainid} , it leaves at {leave} ."],
        "terse": ["{trainid} , {leave} .", "{trainid} at {leave} ."],
    }),
    ("Train-Inform", [("Id", "trainid"), ("Arrive", "arrive"), ("Dest", "dest")], {
        "formal": ["{trainid} arrives in {dest} at {arrive} .", "Train {trainid} reaches {dest} by {arrive} ."],
        "casual": ["{trainid} gets you to {dest} at {arrive} !", "hop on {trainid} , in {dest} by {arrive} ."],
        "terse": ["{trainid} , {dest} {arrive} .", "{trainid} to {dest} , {arrive} ."],
    }),
    ("Train-Inform", [("Ticket", "ticket")], {
        "formal": ["The ticket price is {ticket} .", "A ticket costs {ticket} ."],
        "casual": ["it 's {ticket} a ticket .", "tickets are {ticket} !"],
        "terse": ["{ticket} .", "price {ticket} ."],
    }),
    ("Train-Request", [("Depart", "?")], {
        "formal": ["Where will you be departing from ?", "From which station would you like to leave ?"],
        "casual": ["where are you leaving from ?", "where you setting off from ?"],
        "terse": ["departure ?", "from where ?"],
    }),
    ("Train-Request", [("Leave", "?")], {
        "formal": ["What time would you like to leave ?", "When would you like to depart ?"],
        "casual": ["what time do you wanna head off ?", "when do you want to go ?"],
        "terse": ["time ?", "leave when ?"],
    }),
    ("Attraction-Inform", [("Name", "attr"), ("Type", "atype")], {
        "formal": ["{attr} is a {atype} .", "You may enjoy {attr} , which is a {atype} ."],
        "casual": ["{attr} is a cool {atype} !", "check out {attr} , it 's a {atype} ."],
        "terse": ["{attr} , {atype} .", "{attr} . {atype} ."],
    }),
    ("Attraction-Inform", [("Fee", "fee")], {
        "formal": ["The entrance fee is {fee} .", "Admission is {fee} ."],
        "casual": ["getting in is {fee} !", "it 's {fee} to get in ."],
        "terse": ["fee : {fee} .", "{fee} entry ."],
    }),
    ("Attraction-Recommend", [("Name", "attr"), ("Area", "area")], {
        "formal": ["I would recommend {attr} in the {area} .", "{attr} in the {area} is worth a visit ."],
        "casual": ["you should totally see {attr} in the {area} !", "{attr} over in the {area} is great ."],
        "terse": ["{attr} , {area} .", "try {attr} , {area} ."],
    }),
    ("Taxi-Inform", [("Car", "car"), ("Phone", "phone")], {
        "formal": ["A {car} will collect you . The contact number is {phone} .",
                   "I have booked a {car} , contact number {phone} ."],
        "casual": ["a {car} is coming for you ! call {phone} if needed .", "booked a {car} , number is {phone} ."],
        "terse": ["{car} , {phone} .", "car : {car} . phone : {phone} ."],
    }),
    ("Taxi-Request", [("Leave", "?")], {
        "formal": ["What time would you like the taxi to pick you up ?", "When would you like to be collected ?"],
        "casual": ["when should the taxi come get you ?", "what time do you need the cab ?"],
        "terse": ["pickup time ?", "when ?"],
    }),
    ("general-reqmore", [("none", "none")], {
        "formal": ["Is there anything else I can help you with ?", "May I assist you with anything else ?"],
        "casual": ["anything else you need ?", "need anything else ?"],
        "terse": ["anything else ?", "more ?"],
    }),
    ("general-bye", [("none", "none")], {
        "formal": ["Thank you for using our service . Goodbye .", "Have a pleasant day . Goodbye ."],
        "casual": ["bye ! have a good one .", "see ya , enjoy !"],
        "terse": ["bye .", "goodbye ."],
    }),
]

USER = {
    "formal": ["I would like to find a place to eat , please .", "Could you help me find a hotel ?",
               "I need to book a train , please .", "Could you tell me the phone number ?",
               "I would appreciate a recommendation .", "Thank you very much for your help ."],
    "casual": ["hey , i need somewhere to eat !", "yo can you find me a hotel ?", "i wanna grab a train .",
               "what 's their number ?", "got any ideas ?", "cool thanks !"],
    "terse": ["restaurant .", "hotel .", "train .", "phone number .", "suggestion .", "thanks ."],
}


def fill(template, values):
    out = template
    for k, v in values.items():
        out = out.replace("{" + k + "}", v)
    return out


def system_turn(rng, style):
    # One or two acts; a second act is appended as its own sentence.
    n_acts = 1 if rng.random() < 0.75 else 2
    chosen = rng.sample(range(len(ACTS)), n_acts)
    if n_acts == 2:
        # keep general-* acts last
        chosen.sort(key=lambda i: ACTS[i][0].startswith("general"))
    texts, acts = [], {}
    for i in chosen:
        label, slots, templates = ACTS[i]
        st = style if rng.random() < 0.7 else rng.choice(STYLES)
        template = rng.choice(templates[st])
        values = {}
        pairs = []
        for slot, key in slots:
            if key in ("?", "none"):
                pairs.append([slot, key])
            else:
                values[key] = rng.choice(VALUES[key])
                pairs.append([slot, values[key]])
        texts.append(fill(template, values))
        acts.setdefault(label, []).extend(pairs)
    return " ".join(texts), acts


def make(n_dialogues, seed):
    rng = random.Random(seed)
    data, acts_file = {}, {}
    for d in range(n_dialogues):
        did = "SNG%05d.json" % d if d % 3 else "MUL%05d.json" % d
        style = rng.choice(STYLES)
        turns = rng.randint(2, 5)
        log, dact = [], {}
        inline = d % 2 == 0
        for t in range(turns):
            log.append({"text": rng.choice(USER[style]), "metadata": {}})
            text, acts = system_turn(rng, style)
            entry = {"text": text, "metadata": {}}
            if inline:
                entry["dialog_act"] = acts
            else:
                dact[str(t + 1)] = acts
            log.append(entry)
        data[did] = {"goal": {}, "log": log}
        if not inline:
            acts_file[did[:-5]] = dact
    return data, acts_file


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dialogues", type=int, default=50)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    data, acts = make(args.dialogues, args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "data.json"), "w") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(args.out, "dialogue_acts.json"), "w") as f:
        json.dump(acts, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
